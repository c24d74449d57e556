"""Desk-scale experiment drivers returning :class:`~htcomp.fileio.Table` objects.

Every driver is a deterministic function of its arguments.  Grid point ``i``
and replicate ``s`` draw from ``RngSeed(seed).child(i).child(s)``, so the
points may run on a thread pool (size capped by ``HTC_THREADS``) without
changing any number.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import network as nw
from . import pruning as pr
from .errors import DomainError, EmptyResultError, ParameterError
from .fileio import Table
from .seeding import RngSeed, as_generator
from .stable import (
    EllipticStableParams,
    StableParams,
    sample_elliptic_sas,
    sample_sas,
)
from .tail_index import center_median, estimate_alpha, mean_layer_alpha


class SynthMode(str, enum.Enum):
    INDEPENDENT = "independent"
    COLUMN_CORRELATED = "column_correlated"
    FULLY_CORRELATED = "fully_correlated"


def _threads(n_items: int) -> int:
    cap = os.environ.get("HTC_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            raise ParameterError(f"HTC_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(limit, n_items))


def _pmap(fn, items):
    items = list(items)
    workers = _threads(len(items))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def spearman(x, y) -> float:
    return float(stats.spearmanr(x, y).statistic)


def _root(seed) -> RngSeed:
    return seed if isinstance(seed, RngSeed) else RngSeed(int(seed))


# -- synthetic matrices -------------------------------------------------------

def _elliptic(alpha, dim, n, gen):
    if alpha == 2.0:
        # exp(-||w||^2) is N(0, 2 I)
        return math.sqrt(2.0) * gen.standard_normal((n, dim))
    return sample_elliptic_sas(EllipticStableParams(alpha, dim), n, gen)


def synth_weight_matrix(alpha: float, shape, mode, rng=None) -> np.ndarray:
    """Random ``rows x cols`` matrix with SaS(1) marginals.

    ``independent``: i.i.d. entries.  ``column_correlated``: the columns are
    i.i.d. elliptic vectors.  ``fully_correlated``: the whole matrix is one
    elliptic vector.  ``alpha = 2`` gives the Gaussian counterpart of each.
    """
    if not (0.0 < alpha <= 2.0):
        raise ParameterError(f"alpha must lie in (0, 2], got {alpha}")
    rows, cols = (int(s) for s in shape)
    if rows < 1 or cols < 1:
        raise ParameterError(f"shape must be positive, got {shape}")
    mode = SynthMode(mode)
    gen = as_generator(rng)
    if mode is SynthMode.INDEPENDENT:
        return sample_sas(StableParams(alpha), (rows, cols), gen)
    if mode is SynthMode.COLUMN_CORRELATED:
        return _elliptic(alpha, rows, cols, gen).T.copy()
    return _elliptic(alpha, rows * cols, 1, gen).reshape(rows, cols)


SWEEP_KINDS = ("alpha_pruning", "dim_scaling", "eta_b", "lepage", "synth")


@dataclass
class SweepSpec:
    grid: tuple
    kind: str = "alpha_pruning"
    shape: tuple = (500, 500)
    epsilon: float = 0.1
    p: float = 2.0
    seeds: int = 10
    seed: int = 0
    mode: str = "independent"
    options: dict = field(default_factory=dict)
    out: str | None = None

    def __post_init__(self):
        self.grid = tuple(tuple(g) if isinstance(g, (list, tuple)) else g for g in self.grid)
        self.shape = tuple(int(s) for s in self.shape)
        if not self.grid:
            raise ParameterError("sweep grid must be non-empty")
        if int(self.seeds) < 1:
            raise ParameterError(f"seeds must be >= 1, got {self.seeds}")
        SynthMode(self.mode)
        if self.kind not in SWEEP_KINDS:
            raise ParameterError(f"sweep kind must be one of {SWEEP_KINDS}, got {self.kind!r}")

    @classmethod
    def from_dict(cls, cfg: dict) -> "SweepSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(cfg) - names
        if unknown:
            raise ParameterError(f"unknown sweep keys: {sorted(unknown)}")
        return cls(**cfg)


def alpha_vs_pruning(spec: SweepSpec, mode=None) -> Table:
    """Median over seeds of the pruning ratio ``1 - min_kappa`` reaching error ``epsilon``."""
    if not (0.0 < spec.epsilon < 1.0):
        raise ParameterError(f"epsilon must lie in (0, 1), got {spec.epsilon}")
    mode = SynthMode(mode if mode is not None else spec.mode)
    root = _root(spec.seed)
    alphas = [float(a) for a in spec.grid]

    def point(i):
        ratios = [
            1.0 - pr.min_kappa(
                synth_weight_matrix(alphas[i], spec.shape, mode, root.child(i).child(s)),
                spec.epsilon,
                spec.p,
            )
            for s in range(spec.seeds)
        ]
        return float(np.median(ratios))

    medians = _pmap(point, range(len(alphas)))
    return Table(["alpha", "pruning_ratio"], list(zip(alphas, medians)))


# -- LePage construction ------------------------------------------------------

def lepage_gammas(d: int, rng=None) -> np.ndarray:
    """Partial sums ``Gamma_1 < ... < Gamma_d`` of i.i.d. standard exponentials."""
    if int(d) < 1:
        raise ParameterError(f"d must be >= 1, got {d}")
    return np.cumsum(as_generator(rng).standard_exponential(int(d)))


def lepage_epsilon(alpha: float, gammas, kappa: float, p: float) -> float:
    g = np.asarray(gammas, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise DomainError("gammas must be a non-empty vector")
    if g[0] <= 0.0 or np.any(np.diff(g) <= 0.0):
        raise DomainError("gammas must be positive and strictly increasing")
    if not (0.0 < alpha <= 2.0) or not (p > 0.0):
        raise ParameterError("need alpha in (0, 2] and p > 0")
    if not (0.0 < kappa <= 1.0):
        raise ParameterError(f"kappa must lie in (0, 1], got {kappa}")
    k = pr.kept_count(kappa * g.size, g.size)
    # scale by Gamma_1 so the largest term is 1
    terms = (g / g[0]) ** (-p / alpha)
    return float((terms[k:].sum() / terms.sum()) ** (1.0 / p))


def dim_scaling(alpha: float, p: float, kappa: float, d_grid, seeds: int, seed=0) -> Table:
    """Median relative k-best error of i.i.d. SaS vectors as the dimension grows."""
    root = _root(seed)
    d_grid = [int(d) for d in d_grid]

    def point(i):
        errs = [
            pr.k_best(
                sample_sas(StableParams(alpha), d_grid[i], root.child(i).child(s)),
                kappa * d_grid[i],
                p,
            ).rel_error_p
            for s in range(int(seeds))
        ]
        return float(np.median(errs))

    return Table(["d", "median_rel_error"], list(zip(d_grid, _pmap(point, range(len(d_grid))))))


# -- eta / b sweeps -----------------------------------------------------------

@dataclass(frozen=True)
class LinearRegressionProblem:
    n: int = 1000
    d: int = 100
    noise: float = 1.0
    seed: int = 0

    def dataset(self) -> nw.Dataset:
        gen = RngSeed(int(self.seed), 0).generator()
        X = gen.standard_normal((self.n, self.d))
        w_true = gen.standard_normal(self.d)
        y = X @ w_true + self.noise * gen.standard_normal(self.n)
        return nw.Dataset(X, y)


def ensemble_alpha(tail_averages) -> float:
    """Pooled tail index of ensemble tail averages ``(chains, d)``.

    Each coordinate is centred by its median across chains, then the
    coordinates are laid end to end so every block of the estimator stays
    within a single coordinate (coordinates may have different scales).
    With an odd number of finite chains the last one is dropped.
    """
    A = np.asarray(tail_averages, dtype=float)
    A = A[np.all(np.isfinite(A), axis=1)]
    # an odd chain count would leave the median itself as an exact zero
    A = A[: A.shape[0] - A.shape[0] % 2]
    m, d = A.shape
    if m < 4:
        raise DomainError(f"need at least 4 surviving chains, got {m}")
    A, _ = center_median(A)
    k1 = max(2, min(math.isqrt(m * d), m // 2))
    used = (m // k1) * k1
    return estimate_alpha(A[:used].T.ravel(), k1=k1, center=False).alpha_hat


def eta_b_linear(configs, problem: LinearRegressionProblem, chains: int = 1000, burn: int = 2000,
                 tail: int = 1000, replicates: int = 1, seed=0, replacement: bool = True) -> Table:
    """Tail index of ergodic SGD averages for linear regression per ``(eta, b)``.

    Chains start at the least-squares solution.  Rows of fully diverged
    configurations carry ``nan`` and ``diverged=1``.
    """
    data = problem.dataset()
    w0 = np.linalg.lstsq(data.features, data.labels, rcond=None)[0]
    root = _root(seed)
    configs = [(float(e), int(b)) for e, b in configs]

    def point(i):
        eta, b = configs[i]
        alphas, n_div = [], 0
        for r in range(int(replicates)):
            cfg = nw.SgdConfig(eta, b, burn, replacement, root.child(i).child(r), "squared")
            res = nw.sgd_linear_ensemble(w0, data, cfg, chains, tail)
            n_div += int(res.diverged.sum())
            if (~res.diverged).sum() >= 4:
                alphas.append(ensemble_alpha(res.tail_average))
        return eta, b, eta / b, (float(np.mean(alphas)) if alphas else math.nan), n_div, not alphas

    rows = _pmap(point, range(len(configs)))
    if all(r[5] for r in rows):
        raise EmptyResultError("every configuration of the sweep diverged")
    return Table(["eta", "b", "eta_over_b", "alpha_hat", "n_diverged", "diverged"], rows)


@dataclass(frozen=True)
class MlpProblem:
    n: int = 1000
    dim: int = 10
    hidden: tuple = (64,)
    n_classes: int = 2
    separation: float = 2.0
    seed: int = 0

    def dataset(self, part: int = 0) -> nw.Dataset:
        return gaussian_mixture(self.n, self.dim, self.n_classes, self.separation, RngSeed(int(self.seed), part))

    def sizes(self) -> tuple:
        if len(self.hidden) > 2 or any(h > 256 for h in self.hidden):
            raise ParameterError("desk-scale MLPs have at most 2 hidden layers of <= 256 units")
        return (self.dim, *self.hidden, self.n_classes)


def gaussian_mixture(n: int, dim: int, n_classes: int = 2, separation: float = 2.0, rng=None) -> nw.Dataset:
    """Balanced mixture of unit Gaussians; class ``c`` has mean ``separation * e_c``."""
    gen = as_generator(rng)
    if not 2 <= n_classes <= dim:
        raise ParameterError(f"need 2 <= n_classes <= dim, got {n_classes} classes in {dim} dims")
    means = separation * np.eye(n_classes, dim)
    labels = np.arange(n) % n_classes
    X = means[labels] + gen.standard_normal((n, dim))
    return nw.Dataset(X, labels)


def train_mlp(problem: MlpProblem, eta: float, b: int, iters: int, tail: int, seed) -> tuple:
    """Train one MLP; returns ``(tail-averaged weights, per-layer alpha estimates, diverged)``."""
    root = _root(seed)
    data = problem.dataset()
    net0 = nw.init_uniform(problem.sizes(), root.child(0))
    cfg = nw.SgdConfig(eta, b, iters, False, root.child(1), "nll")
    traj = nw.sgd_train(net0, data, cfg)
    if traj.diverged:
        return None, [], True
    avg = nw.ergodic_tail_average(traj, tail)
    per_layer = [estimate_alpha(W.ravel()).alpha_hat for W in avg.layers]
    return avg, per_layer, False


def eta_b_mlp(configs, problem: MlpProblem, iters: int = 2000, tail: int = 1000, replicates: int = 1, seed=0) -> Table:
    root = _root(seed)
    configs = [(float(e), int(b)) for e, b in configs]

    def point(i):
        eta, b = configs[i]
        alphas, n_div = [], 0
        for r in range(int(replicates)):
            _, per_layer, div = train_mlp(problem, eta, b, iters, tail, root.child(i).child(r))
            n_div += int(div)
            if not div:
                alphas.append(mean_layer_alpha(per_layer))
        return eta, b, eta / b, (float(np.mean(alphas)) if alphas else math.nan), n_div, not alphas

    rows = _pmap(point, range(len(configs)))
    if all(r[5] for r in rows):
        raise EmptyResultError("every configuration of the sweep diverged")
    return Table(["eta", "b", "eta_over_b", "alpha_hat", "n_diverged", "diverged"], rows)


def eta_b_sweep(configs, problem, **kwargs) -> Table:
    if isinstance(problem, LinearRegressionProblem):
        return eta_b_linear(configs, problem, **kwargs)
    if isinstance(problem, MlpProblem):
        return eta_b_mlp(configs, problem, **kwargs)
    raise ParameterError(f"unknown problem type {type(problem).__name__}")


# -- pruning vs accuracy ------------------------------------------------------

SCHEMES = ("global", "layerwise", "svd", "node")


def prune_network(net: nw.FcnWeights, scheme: str, kappa: float, p: float = 2.0, center: bool = True) -> nw.FcnWeights:
    """Prune ``net`` with one scheme.

    With ``center=True`` the median is subtracted first (per layer, or over
    all weights for ``global``) and added back afterwards.  ``kappa = 1``
    returns an exact copy.
    """
    if scheme not in SCHEMES:
        raise ParameterError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if not (0.0 < kappa <= 1.0):
        raise ParameterError(f"kappa must lie in (0, 1], got {kappa}")
    if kappa == 1.0:
        return net.copy()
    if scheme == "global":
        flat = net.flat()
        med = float(np.median(flat)) if center else 0.0
        res = pr.k_best(flat - med, kappa * flat.size, p)
        return net.with_flat(res.pruned + med)
    out = []
    for W in net.layers:
        med = float(np.median(W)) if center else 0.0
        Wc = W - med
        if scheme == "layerwise":
            P = pr.k_best(Wc, kappa * Wc.size, p).pruned
        elif scheme == "svd":
            P = pr.svd_prune(Wc, kappa).pruned
        else:
            P = pr.node_prune(Wc, kappa, p).pruned
        out.append(P + med)
    return nw.FcnWeights(out)


def net_alpha(net: nw.FcnWeights) -> float:
    return mean_layer_alpha([estimate_alpha(W.ravel()) for W in net.layers])


def prune_accuracy_sweep(nets, scheme: str, kappa_grid, data: nw.Dataset, p: float = 2.0) -> Table:
    """Relative test accuracy of each net after pruning at every ``kappa``."""
    nets = list(nets)
    if not nets:
        raise DomainError("need at least one network")
    grid = [float(k) for k in kappa_grid]

    def one(j):
        net = nets[j]
        a = net_alpha(net)
        return [(j, a, 1.0 - k, nw.relative_test_accuracy(net, prune_network(net, scheme, k, p), data)) for k in grid]

    rows = [r for block in _pmap(one, range(len(nets))) for r in block]
    return Table(["net", "alpha_hat", "pruning_ratio", "relative_accuracy"], rows)


def synth_study(spec: SweepSpec) -> Table:
    """Pruning ratio versus alpha for all three synthetic modes on one grid."""
    rows = []
    for mode in SynthMode:
        t = alpha_vs_pruning(spec, mode)
        rows.extend((mode.value, a, r) for a, r in t.rows)
    return Table(["mode", "alpha", "pruning_ratio"], rows)


def lepage_table(alphas, d: int, kappa: float, p: float, draws: int, seed=0) -> Table:
    """Median LePage error per alpha; every alpha reuses the same Gamma draws."""
    root = _root(seed)
    gammas = [lepage_gammas(d, root.child(s)) for s in range(int(draws))]
    rows = [(float(a), float(np.median([lepage_epsilon(a, g, kappa, p) for g in gammas]))) for a in alphas]
    return Table(["alpha", "median_epsilon"], rows)


def run_sweep(spec: SweepSpec) -> Table:
    """Dispatch on ``spec.kind``; extra parameters come from ``spec.options``."""
    opt = dict(spec.options)

    def take(name, default):
        return opt.pop(name, default)

    if spec.kind == "alpha_pruning":
        table = alpha_vs_pruning(spec)
    elif spec.kind == "synth":
        table = synth_study(spec)
    elif spec.kind == "dim_scaling":
        table = dim_scaling(float(take("alpha", 1.7)), spec.p, float(take("kappa", 0.1)), spec.grid, spec.seeds, spec.seed)
    elif spec.kind == "lepage":
        table = lepage_table(spec.grid, int(take("d", 1000)), float(take("kappa", 0.1)), spec.p, spec.seeds, spec.seed)
    else:
        problem = LinearRegressionProblem(
            n=int(take("n", 1000)), d=int(take("d", 100)), noise=float(take("noise", 1.0)), seed=int(spec.seed)
        )
        table = eta_b_linear(
            spec.grid,
            problem,
            chains=int(take("chains", 1000)),
            burn=int(take("burn", 2000)),
            tail=int(take("tail", 1000)),
            replicates=spec.seeds,
            seed=spec.seed,
            replacement=bool(take("replacement", True)),
        )
    if opt:
        raise ParameterError(f"unused options for sweep kind {spec.kind!r}: {sorted(opt)}")
    return table
