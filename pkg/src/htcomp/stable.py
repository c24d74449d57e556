"""Symmetric, positive and elliptically contoured alpha-stable laws.

Conventions
-----------
``SaS(sigma)`` has characteristic function ``exp(-|sigma * w| ** alpha)``.
For ``alpha = 2`` this is a centred Gaussian with variance ``2 * sigma**2``.

The positive stable law used here (total skewness, ``0 < alpha < 1``) is
normalised so that its Laplace transform is ``E exp(-s A) = exp(-s**alpha)``,
i.e. :data:`POSITIVE_STABLE_LAPLACE_SCALE` is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ParameterError
from .seeding import as_generator

POSITIVE_STABLE_LAPLACE_SCALE = 1.0

_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class StableParams:
    alpha: float
    sigma: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 2.0):
            raise ParameterError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise ParameterError(f"sigma must be positive and finite, got {self.sigma}")


@dataclass(frozen=True)
class EllipticStableParams:
    alpha: float
    dim: int

    def __post_init__(self):
        if not (0.0 < self.alpha < 2.0):
            raise ParameterError(
                f"elliptic stable sampler needs alpha in (0, 2), got {self.alpha}; "
                "use a Gaussian directly for alpha = 2"
            )
        if int(self.dim) < 1:
            raise ParameterError(f"dim must be >= 1, got {self.dim}")


def _count(n):
    size = (n,) if np.isscalar(n) else tuple(n)
    if any(int(s) < 1 for s in size):
        raise ParameterError(f"sample size must be >= 1, got {n}")
    return size


def _uniform_exponential(gen, size, low, high):
    # drawn in a fixed order so every sampler consumes its stream identically
    u = low + (high - low) * (1.0 - gen.random(size))
    w = np.maximum(gen.standard_exponential(size), _TINY)
    return u, w


def sample_sas(params: StableParams, n, rng=None) -> np.ndarray:
    """Draw i.i.d. ``SaS(sigma)`` variates with the Chambers-Mallows-Stuck map.

    ``n`` may be an int or a shape tuple.  All branches consume one uniform
    and one exponential per variate, so different ``alpha`` values driven by
    the same stream are coupled monotonically.
    """
    size = _count(n)
    gen = as_generator(rng)
    a = float(params.alpha)
    u, w = _uniform_exponential(gen, size, -0.5 * np.pi, 0.5 * np.pi)
    if a == 2.0:
        x = 2.0 * np.sqrt(w) * np.sin(u)
    elif a == 1.0:
        x = np.tan(u)
    else:
        x = (
            np.sin(a * u)
            / np.cos(u) ** (1.0 / a)
            * (np.cos((1.0 - a) * u) / w) ** ((1.0 - a) / a)
        )
    return params.sigma * x


def sample_positive_stable(alpha: float, n, rng=None) -> np.ndarray:
    """Totally skewed positive stable draws (Kanter's representation).

    The result satisfies ``E exp(-s A) = exp(-s**alpha)``.
    """
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"positive stable sampler needs alpha in (0, 1), got {alpha}")
    size = _count(n)
    gen = as_generator(rng)
    u, w = _uniform_exponential(gen, size, 0.0, np.pi)
    a = float(alpha)
    x = (
        np.sin(a * u)
        / np.sin(u) ** (1.0 / a)
        * (np.sin((1.0 - a) * u) / w) ** ((1.0 - a) / a)
    )
    return np.maximum(x, _TINY)


def sample_elliptic_sas(params: EllipticStableParams, n: int, rng=None) -> np.ndarray:
    """Sub-Gaussian construction ``X = sqrt(2 A) G`` returning shape ``(n, dim)``.

    ``A`` is positive ``(alpha/2)``-stable and ``G`` standard normal, which
    gives ``E exp(i <omega, X>) = exp(-||omega|| ** alpha)``.
    """
    if int(n) < 1:
        raise ParameterError(f"sample size must be >= 1, got {n}")
    gen = as_generator(rng)
    a = sample_positive_stable(params.alpha / 2.0, int(n), gen)
    g = gen.standard_normal((int(n), int(params.dim)))
    return np.sqrt(2.0 * a)[:, None] * g


def sigma_alpha(alpha: float) -> float:
    """``(2 Gamma(-alpha) cos((2 - alpha) pi / 2)) ** (1 / alpha)`` for ``1 < alpha < 2``."""
    if not (1.0 < alpha < 2.0):
        raise ParameterError(f"sigma_alpha is defined for alpha in (1, 2), got {alpha}")
    base = 2.0 * special.gamma(-alpha) * math.cos((2.0 - alpha) * math.pi / 2.0)
    if not (base > 0.0 and math.isfinite(base)):
        raise ParameterError(f"sigma_alpha undefined at alpha={alpha}")
    return base ** (1.0 / alpha)


def char_fn_sas(params: StableParams, w):
    return np.exp(-np.abs(params.sigma * np.asarray(w, dtype=float)) ** params.alpha)
