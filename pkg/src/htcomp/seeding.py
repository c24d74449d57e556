"""Reproducible random streams.

An :class:`RngSeed` names a stream by ``(seed, stream_id)``.  Child streams
are derived by hashing the parent with a task index, so a sweep gives every
grid point its own stream regardless of the order in which points execute.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

_U64 = 2**64


@dataclass(frozen=True)
class RngSeed:
    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) < _U64:
                raise ParameterError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        """Fresh Philox generator positioned at the start of this stream."""
        ss = np.random.SeedSequence([int(self.seed), int(self.stream_id)])
        return np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "RngSeed":
        digest = hashlib.blake2b(
            struct.pack("<QQQ", int(self.seed), int(self.stream_id), int(index) % _U64),
            digest_size=8,
        ).digest()
        return RngSeed(self.seed, struct.unpack("<Q", digest)[0])


def as_generator(rng) -> np.random.Generator:
    """Accept an RngSeed, a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSeed):
        return rng.generator()
    if rng is None:
        return RngSeed().generator()
    if isinstance(rng, (int, np.integer)):
        return RngSeed(int(rng)).generator()
    raise ParameterError(f"cannot build a random generator from {type(rng).__name__}")
