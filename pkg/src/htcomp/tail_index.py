"""Block-sum tail-index estimator for (multivariate) strictly stable samples."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, DomainError, ParameterError
from .seeding import as_generator


@dataclass(frozen=True)
class TailIndexEstimate:
    alpha_hat: float
    k1: int
    k2: int
    n_used: int


def center_median(x):
    """Subtract the median.  2-D input is centred column by column.

    Returns ``(centered, median)``; the median is a scalar for 1-D input and
    a vector of per-coordinate medians otherwise.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise DomainError("cannot centre an empty sample")
    med = np.median(x, axis=0)
    return x - med, (float(med) if x.ndim == 1 else med)


def estimate_alpha(x, k1=None, center=True, shuffle=None) -> TailIndexEstimate:
    """Estimate the tail index from i.i.d. samples.

    Parameters
    ----------
    x : array of shape (K,) or (K, dim)
        Scalar samples, or K vector samples of dimension ``dim``.
    k1 : int, optional
        Block size.  Defaults to ``floor(sqrt(K))``.  Samples beyond
        ``k1 * (K // k1)`` are dropped from the end.
    center : bool
        Median-centre before estimating.  Leave off for positive data whose
        law is strictly stable without a shift.
    shuffle : RngSeed or Generator, optional
        Permute the samples before blocking.  Needed when the input order is
        not exchangeable (e.g. sorted eigenvalues).

    Notes
    -----
    ``1/alpha_hat = (mean_i log||Y_i|| - mean_j log||X_j||) / log k1`` where
    ``Y_i`` sums ``k1`` consecutive samples.  The estimate is not clamped.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[0] == 0:
        raise DomainError(f"expected a non-empty 1-D or 2-D sample, got shape {x.shape}")
    if center:
        x, _ = center_median(x)
    if shuffle is not None:
        x = x[as_generator(shuffle).permutation(x.shape[0])]
    K = x.shape[0]
    if k1 is None:
        k1 = math.isqrt(K)
    k1 = int(k1)
    if k1 < 2:
        raise ParameterError(f"block size k1 must be >= 2, got {k1}")
    k2 = K // k1
    if k2 < 2:
        raise DomainError(f"need at least 2*k1 = {2 * k1} samples, got {K}")
    used = x[: k1 * k2]
    if used.ndim == 1:
        norms = np.abs(used)
        block_norms = np.abs(used.reshape(k2, k1).sum(axis=1))
    else:
        norms = np.linalg.norm(used, axis=1)
        block_norms = np.linalg.norm(used.reshape(k2, k1, -1).sum(axis=1), axis=1)
    if np.any(norms == 0.0):
        idx = int(np.flatnonzero(norms == 0.0)[0])
        raise DegenerateSampleError(f"sample {idx} has zero norm after centring")
    if np.any(block_norms == 0.0):
        raise DegenerateSampleError("a block sum has zero norm")
    inv = (np.mean(np.log(block_norms)) - np.mean(np.log(norms))) / math.log(k1)
    return TailIndexEstimate(alpha_hat=float(1.0 / inv), k1=k1, k2=k2, n_used=k1 * k2)


def mean_layer_alpha(per_layer) -> float:
    """Arithmetic mean of per-layer estimates (a heuristic summary)."""
    vals = [e.alpha_hat if isinstance(e, TailIndexEstimate) else float(e) for e in per_layer]
    if not vals:
        raise DomainError("need at least one per-layer estimate")
    return float(np.mean(vals))
