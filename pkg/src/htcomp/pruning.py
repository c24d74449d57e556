"""Magnitude, singular-value and node pruning with relative l_p errors.

All kernels are pure.  Fractional kept-counts are rounded up; ties in
magnitude (or column norm) keep the lower index first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ParameterError, SVDConvergenceError

# counts within this relative distance of an integer are snapped to it before
# rounding up, so kappa * d = 3.0000000000000004 keeps 3 entries
_COUNT_SNAP = 1e-9


@dataclass
class PruneResult:
    pruned: object
    kept_mask: object
    kappa: float
    rel_error_p: float
    p: float


@dataclass(frozen=True)
class EigenSpectrum:
    lambdas: np.ndarray
    normalization: float


def kept_count(k: float, d: int) -> int:
    """``min(d, ceil(k))`` with float noise around integers removed."""
    if not (k >= 0.0):
        raise ParameterError(f"kept count must be >= 0, got {k}")
    snapped = round(k)
    if abs(k - snapped) <= _COUNT_SNAP * max(1.0, abs(k)):
        k = snapped
    return int(min(d, math.ceil(k)))


def lp_norm(v, p: float) -> float:
    """(Quasi-)norm ``(sum |v_i|^p)^(1/p)``, computed with max-scaling."""
    if not (p > 0.0):
        raise ParameterError(f"p must be positive, got {p}")
    a = np.abs(np.ravel(np.asarray(v, dtype=float)))
    if a.size == 0:
        return 0.0
    m = a.max()
    if m == 0.0 or not math.isfinite(m):
        return float(m)
    return float(m * np.sum((a / m) ** p) ** (1.0 / p))


def relative_lp_error(x, xhat, p: float = 2.0) -> float:
    x = np.asarray(x, dtype=float)
    xhat = np.asarray(xhat, dtype=float)
    if x.shape != xhat.shape:
        raise DomainError(f"shape mismatch: {x.shape} vs {xhat.shape}")
    denom = lp_norm(x, p)
    if denom == 0.0:
        raise DomainError("relative error undefined for a zero reference vector")
    return lp_norm(xhat - x, p) / denom


def _magnitude_order(a):
    # stable sort on -|a| keeps lower indices first among ties
    return np.argsort(-np.abs(a), kind="stable")


def k_best(x, k: float, p: float = 2.0) -> PruneResult:
    """Keep the ``ceil(k)`` largest-magnitude entries of ``x``, zero the rest."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise DomainError("k_best needs a non-empty vector")
    flat = x.ravel()
    keep = kept_count(k, flat.size)
    mask = np.zeros(flat.size, dtype=bool)
    mask[_magnitude_order(flat)[:keep]] = True
    pruned = np.where(mask, flat, 0.0).reshape(x.shape)
    # an all-zero input is reproduced exactly, so its error is reported as 0
    err = relative_lp_error(x, pruned, p) if np.any(flat) else 0.0
    return PruneResult(
        pruned=pruned,
        kept_mask=mask.reshape(x.shape),
        kappa=keep / flat.size,
        rel_error_p=err,
        p=p,
    )


def _layers(net) -> list:
    layers = getattr(net, "layers", net)
    layers = [np.asarray(W, dtype=float) for W in layers]
    if not layers:
        raise DomainError("network has no layers")
    return layers


def global_magnitude_prune(net, kappa: float, p: float = 2.0) -> PruneResult:
    """Magnitude-prune the concatenation of all layers; returns per-layer lists."""
    if not (0.0 < kappa <= 1.0):
        raise ParameterError(f"kappa must lie in (0, 1], got {kappa}")
    layers = _layers(net)
    flat = np.concatenate([W.ravel() for W in layers])
    res = k_best(flat, kappa * flat.size, p)
    pruned, masks, start = [], [], 0
    for W in layers:
        stop = start + W.size
        pruned.append(res.pruned[start:stop].reshape(W.shape))
        masks.append(res.kept_mask[start:stop].reshape(W.shape))
        start = stop
    return PruneResult(pruned, masks, res.kappa, res.rel_error_p, p)


def layerwise_magnitude_prune(net, kappas: Sequence[float], p: float = 2.0) -> list:
    layers = _layers(net)
    kappas = list(np.atleast_1d(np.asarray(kappas, dtype=float)))
    if len(kappas) != len(layers):
        raise ParameterError(f"got {len(kappas)} ratios for {len(layers)} layers")
    out = []
    for W, kap in zip(layers, kappas):
        if not (0.0 < kap <= 1.0):
            raise ParameterError(f"kappa must lie in (0, 1], got {kap}")
        out.append(k_best(W, kap * W.size, p))
    return out


# -- singular values ---------------------------------------------------------

def _round_robin(n):
    """Yield (P, Q) index arrays of disjoint pairs covering all pairs once."""
    players = list(range(n))
    for _ in range(n - 1):
        half = n // 2
        yield (np.array(players[:half]), np.array(players[::-1][:half]))
        players = [players[0]] + [players[-1]] + players[1:-1]


def jacobi_svd(A, tol: float = 1e-12, max_sweeps: int = 100, compute_uv: bool = True):
    """One-sided (Hestenes) Jacobi SVD.

    Columns are orthogonalised in round-robin order, each round rotating
    ``n/2`` disjoint pairs at once.  A pair is rotated while
    ``|a_p . a_q| > tol * ||a_p|| ||a_q||``; columns with norm below
    ``tol * ||A||_F`` are treated as converged.  Returns ``(U, s, Vt)`` (or
    ``s`` only) with ``s`` nonincreasing and ``min(m, n)`` long.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.size == 0:
        raise DomainError(f"expected a non-empty matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DomainError("matrix has non-finite entries")
    transposed = A.shape[0] < A.shape[1]
    # rows of `rows_` are the columns being orthogonalised (contiguous gathers)
    rows_ = np.array(A if transposed else A.T, dtype=float, order="C")
    n, m = rows_.shape
    if n % 2:
        rows_ = np.vstack([rows_, np.zeros((1, m))])
    n_pad = rows_.shape[0]
    Vt = np.eye(n_pad) if compute_uv else None
    floor = (tol * np.linalg.norm(A)) ** 2

    converged = n_pad == 1
    worst = 0.0
    for sweep in range(max_sweeps):
        worst = 0.0
        rotated = False
        sq = np.einsum("ij,ij->i", rows_, rows_)
        for P, Q in _round_robin(n_pad):
            ap, aq = rows_[P], rows_[Q]
            alpha, beta = sq[P], sq[Q]
            gamma = np.einsum("ij,ij->i", ap, aq)
            live = (alpha > floor) & (beta > floor)
            off = np.zeros_like(gamma)
            off[live] = np.abs(gamma[live]) / np.sqrt(alpha[live] * beta[live])
            rot = live & (off > tol)
            if not rot.any():
                continue
            worst = max(worst, float(off.max()))
            rotated = True
            P, Q = P[rot], Q[rot]
            ap, aq = ap[rot], aq[rot]
            g = gamma[rot]
            zeta = (beta[rot] - alpha[rot]) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            rows_[P] = c * ap - s * aq
            rows_[Q] = s * ap + c * aq
            sq[P] = alpha[rot] - t * g
            sq[Q] = beta[rot] + t * g
            if compute_uv:
                vp, vq = Vt[P], Vt[Q]
                Vt[P] = c * vp - s * vq
                Vt[Q] = s * vp + c * vq
        if not rotated:
            converged = True
            break
    if not converged:
        raise SVDConvergenceError(max_sweeps, worst)

    sv = np.linalg.norm(rows_, axis=1)
    order = np.argsort(-sv, kind="stable")[: min(m, n)]
    sv = sv[order]
    if not compute_uv:
        return sv
    left = np.zeros((order.size, m))
    nz = sv > 0
    left[nz] = rows_[order[nz]] / sv[nz, None]
    right = Vt[order, :n]
    # A^T = V S U^T when transposed, else A = U S V^T with U from `left`
    if transposed:
        return right.T, sv, left
    return left.T, sv, right


def svd_prune(W, kappa: float) -> PruneResult:
    """Keep the ``ceil(kappa * h_{l-1})`` largest singular values of ``W``.

    ``kappa`` in the result is the parameter ratio of the factored form,
    ``k (h_l + h_{l-1} + 1) / (h_l h_{l-1})``, capped at 1 (a dense matrix is
    never more expensive than its factors).  The error is Frobenius (p = 2).
    """
    if not (0.0 < kappa <= 1.0):
        raise ParameterError(f"kappa must lie in (0, 1], got {kappa}")
    W = np.asarray(W, dtype=float)
    U, s, Vt = jacobi_svd(W)
    rows, cols = W.shape
    keep = min(kept_count(kappa * cols, cols), s.size)
    mask = np.zeros(s.size, dtype=bool)
    mask[:keep] = True
    approx = (U[:, :keep] * s[:keep]) @ Vt[:keep]
    ratio = min(1.0, keep * (rows + cols + 1) / (rows * cols))
    return PruneResult(approx, mask, ratio, relative_lp_error(W, approx, 2.0), 2.0)


def eigen_spectrum(W, alpha: float) -> EigenSpectrum:
    """Eigenvalues of ``h_l**(-2/alpha) W^T W`` for ``W`` of shape ``(h_l, h_{l-1})``."""
    if not (0.0 < alpha < 2.0):
        raise ParameterError(f"alpha must lie in (0, 2), got {alpha}")
    W = np.asarray(W, dtype=float)
    rows, cols = W.shape
    s = jacobi_svd(W, compute_uv=False)
    lam = np.zeros(cols)
    lam[: s.size] = s**2
    expo = 2.0 / alpha
    return EigenSpectrum(lambdas=lam * float(rows) ** (-expo), normalization=expo)


def node_prune(W, kappa: float, p: float = 2.0) -> PruneResult:
    """Keep the ``ceil(kappa * h_{l-1})`` columns of largest l_p norm."""
    if not (0.0 < kappa <= 1.0):
        raise ParameterError(f"kappa must lie in (0, 1], got {kappa}")
    if not (p > 0.0):
        raise ParameterError(f"p must be positive, got {p}")
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[1] == 0 or W.shape[0] == 0:
        raise DomainError(f"node pruning needs a non-empty matrix, got shape {W.shape}")
    cols = W.shape[1]
    norms = np.array([lp_norm(W[:, j], p) for j in range(cols)])
    keep = kept_count(kappa * cols, cols)
    col_mask = np.zeros(cols, dtype=bool)
    col_mask[_magnitude_order(norms)[:keep]] = True
    pruned = W * col_mask[None, :]
    return PruneResult(pruned, col_mask, keep / cols, relative_lp_error(W, pruned, p), p)


def _tail_sums(x, p):
    a = np.abs(np.ravel(np.asarray(x, dtype=float)))
    m = a.max() if a.size else 0.0
    if m == 0.0:
        raise DomainError("compressibility undefined for a zero vector")
    powered = np.sort((a / m) ** p)  # ascending
    # suffix[k] = mass left after keeping the k largest entries
    suffix = np.concatenate([np.cumsum(powered)[::-1], [0.0]])
    return suffix


def min_kappa(x, epsilon: float, p: float = 2.0) -> float:
    """Smallest ``k/d`` whose k-best approximation has relative error <= epsilon."""
    if not (epsilon >= 0.0):
        raise ParameterError(f"target error must be >= 0, got {epsilon}")
    if not (p > 0.0):
        raise ParameterError(f"p must be positive, got {p}")
    suffix = _tail_sums(x, p)
    d = suffix.size - 1
    total = suffix[0]

    def ok(k):
        return (suffix[k] / total) ** (1.0 / p) <= epsilon

    lo, hi = 0, d  # ok(d) always holds: zero error
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo / d


def compress_curve(x, p: float, kappa_grid) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grid = np.atleast_1d(np.asarray(kappa_grid, dtype=float))
    if np.any((grid <= 0.0) | (grid > 1.0)):
        raise ParameterError("kappa grid values must lie in (0, 1]")
    return np.array([k_best(x, kap * x.size, p).rel_error_p for kap in grid])
