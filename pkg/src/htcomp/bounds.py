"""Closed-form perturbation and generalization bounds for pruned ReLU nets.

Everything here is a pure function of its arguments.  Logarithms are
natural.  Preconditions of each bound are enforced with
:class:`~htcomp.errors.PreconditionError` rather than extrapolated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, ParameterError, PreconditionError
from .pruning import kept_count
from .stable import sigma_alpha


def binary_entropy(kappa: float) -> float:
    if not (0.0 <= kappa <= 1.0):
        raise ParameterError(f"binary entropy needs kappa in [0, 1], got {kappa}")
    if kappa in (0.0, 1.0):
        return 0.0
    return -kappa * math.log(kappa) - (1.0 - kappa) * math.log1p(-kappa)


def epsilon_kappa(kappa: float, n: float) -> float:
    if not (n >= 2):
        raise ParameterError(f"need n >= 2, got {n}")
    if not (0.0 < kappa <= 1.0):
        raise ParameterError(f"kappa must lie in (0, 1], got {kappa}")
    return (2.0 * binary_entropy(kappa) - kappa * math.log(kappa)) / math.log(n)


def _snap_up(x: float) -> int:
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return int(math.ceil(x))


def r_quantile(norms, delta: float) -> float:
    """Empirical ``(1 - delta)``-quantile of observed weight norms.

    Rule: sort ascending and take the entry at index
    ``ceil((N - 1) * (1 - delta))`` (0-based), i.e. the upper neighbour of the
    linearly interpolated position.  Float noise within 1e-9 of an integer
    position is snapped first.
    """
    a = np.sort(np.ravel(np.asarray(norms, dtype=float)))
    if a.size == 0:
        raise DomainError("r_quantile needs at least one norm")
    if not (0.0 < delta < 1.0):
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    idx = min(a.size - 1, _snap_up((a.size - 1) * (1.0 - delta)))
    return float(a[idx])


def stable_norm_bound(sigma: float, d: int, alpha: float, alpha_max: float, delta: float) -> float:
    """``3 sigma sqrt(d) (4 d / delta)^(1/alpha)``, valid for ``delta < 2 d (2 - alpha_max)^alpha``."""
    if not (1.0 < alpha < 2.0):
        raise ParameterError(f"alpha must lie in (1, 2), got {alpha}")
    if not (alpha <= alpha_max < 2.0):
        raise ParameterError(f"alpha_max must satisfy alpha <= alpha_max < 2, got {alpha_max}")
    if not (sigma > 0.0 and d >= 1 and delta > 0.0):
        raise ParameterError("sigma, d and delta must be positive")
    limit = 2.0 * d * (2.0 - alpha_max) ** alpha
    if not delta < limit:
        raise PreconditionError(
            f"norm bound requires delta < 2 d (2 - alpha_max)^alpha = {limit:.6g}, got {delta}"
        )
    return 3.0 * sigma * math.sqrt(d) * (4.0 * d / delta) ** (1.0 / alpha)


def lipschitz_coeff(tau: float, R: float, B: float, L: int) -> float:
    """``sqrt(2) B L (2 R / sqrt(L))^(L-1) / tau``."""
    if not (tau > 0.0):
        raise ParameterError(f"tau must be positive, got {tau}")
    if not (R > 0.0 and B > 0.0):
        raise ParameterError("R and B must be positive")
    if int(L) != L or L < 2:
        raise PreconditionError(f"depth must be an integer >= 2, got {L}")
    return math.sqrt(2.0) * B * L * (2.0 * R / math.sqrt(L)) ** (L - 1) / tau


def perturbation_bound(layer_norms: Sequence[float], eps_l: Sequence[float], B: float) -> float:
    """``B (prod(1 + eps_l) - 1) prod ||w_l||`` for relative layer errors ``eps_l``."""
    norms = np.asarray(layer_norms, dtype=float)
    eps = np.asarray(eps_l, dtype=float)
    if norms.shape != eps.shape or norms.ndim != 1:
        raise DomainError("layer_norms and eps_l must be vectors of equal length")
    if np.any(norms < 0) or np.any(eps < 0) or B < 0:
        raise ParameterError("norms, errors and B must be nonnegative")
    grow = float(np.expm1(np.sum(np.log1p(eps))))
    return B * grow * float(np.prod(norms))


def perturbation_bound_uniform(eps: float, R: float, B: float, L: int) -> float:
    """Form used when every layer has relative error ``eps`` and ``||w|| <= R``."""
    return B * math.expm1(L * math.log1p(eps)) * (R / math.sqrt(L)) ** L


@dataclass(frozen=True)
class BoundInputs:
    n: int
    d_l: tuple
    kappa_l: tuple
    epsilon: float
    delta: float
    tau: float
    B: float
    R: float
    fail_prob: float = 0.0  # probability that the layer-wise compression assumption fails

    def __post_init__(self):
        object.__setattr__(self, "d_l", tuple(int(v) for v in self.d_l))
        object.__setattr__(self, "kappa_l", tuple(float(v) for v in self.kappa_l))
        if not self.d_l or len(self.d_l) != len(self.kappa_l):
            raise ParameterError("need one kappa per layer and at least one layer")
        if min(self.d_l) < 1:
            raise ParameterError("layer parameter counts must be positive")
        if any(not (0.0 < k <= 1.0) for k in self.kappa_l):
            raise ParameterError("per-layer kappa values must lie in (0, 1]")
        if not (self.n >= 2):
            raise ParameterError(f"need n >= 2, got {self.n}")
        if self.epsilon < 0 or self.delta <= 0 or self.tau <= 0 or self.B <= 0 or self.R <= 0:
            raise ParameterError("need epsilon >= 0 and delta, tau, B, R > 0")
        if not (0.0 <= self.fail_prob <= 1.0):
            raise ParameterError("fail_prob must lie in [0, 1]")

    @property
    def L(self) -> int:
        return len(self.d_l)

    @property
    def d(self) -> int:
        return sum(self.d_l)

    @property
    def kappa(self) -> float:
        kept = sum(kept_count(k * dl, dl) for k, dl in zip(self.kappa_l, self.d_l))
        return kept / self.d


@dataclass
class BoundReport:
    bound: float
    empirical_risk: float
    complexity: float
    gamma: float
    kappa: float
    confidence: float
    extras: dict = field(default_factory=dict)


def margin_gamma(inp: BoundInputs) -> float:
    """``tau + (sqrt(2) B / tau) (R / sqrt(L))^L ((1 + eps)^L - 1)``."""
    L = inp.L
    return inp.tau + math.sqrt(2.0) * inp.B / inp.tau * perturbation_bound_uniform(
        inp.epsilon, inp.R, 1.0, L
    )


def _check_risk(r):
    if not (0.0 <= r <= 1.0):
        raise ParameterError(f"empirical risk must lie in [0, 1], got {r}")


def gen_bound_pruned(inp: BoundInputs, empirical_margin_risk: float) -> BoundReport:
    """Population risk bound for the layer-wise magnitude-pruned network."""
    _check_risk(empirical_margin_risk)
    n, L = inp.n, inp.L
    if n / math.log(n) < 10 * L:
        raise PreconditionError(f"bound requires n / log n >= 10 L = {10 * L}; got {n / math.log(n):.4g}")
    kappa = inp.kappa
    eps_k = epsilon_kappa(kappa, n)
    lip = lipschitz_coeff(inp.tau, inp.R, inp.B, L)
    complexity = (12.0 * lip * inp.R + math.sqrt(inp.d)) * math.sqrt((kappa + eps_k) * math.log(n) / n)
    conf = 1.0 - 2.0 * math.exp(-kappa * inp.d / 2.0) - inp.delta - inp.fail_prob
    return BoundReport(
        bound=empirical_margin_risk + complexity,
        empirical_risk=empirical_margin_risk,
        complexity=complexity,
        gamma=margin_gamma(inp),
        kappa=kappa,
        confidence=conf,
        extras={"epsilon_kappa": eps_k, "lipschitz": lip},
    )


def h_b1(kappa: float, d: int) -> float:
    half = math.ceil(d / 2)
    a = math.ceil(kappa * d / 2) / half
    b = math.floor(kappa * d / 2) / half
    return half / d * max(binary_entropy(min(a, 1.0)), binary_entropy(min(b, 1.0)))


def rho_epsilon(epsilon: float, kappa: float, d: int) -> float:
    """``min(eps^(1-kappa) exp(h_b(kappa) + h_b1(kappa, d)), 1)``."""
    if not (0.0 <= kappa <= 1.0):
        raise ParameterError(f"kappa must lie in [0, 1], got {kappa}")
    if epsilon < 0 or int(d) < 1:
        raise ParameterError("need epsilon >= 0 and d >= 1")
    if kappa == 1.0:
        base = 1.0
    else:
        base = epsilon ** (1.0 - kappa)
    return min(base * math.exp(binary_entropy(kappa) + h_b1(kappa, int(d))), 1.0)


def gen_bound_original(inp: BoundInputs, empirical_risk_tau: float) -> BoundReport:
    """Risk bound for the unpruned network given that it is compressible."""
    _check_risk(empirical_risk_tau)
    n, L, d = inp.n, inp.L, inp.d
    if d < 10:
        raise PreconditionError(f"bound requires d >= 10, got {d}")
    if inp.epsilon <= 0.0:
        raise PreconditionError("bound requires epsilon > 0")
    kappa = inp.kappa
    need = max(9 * L, 81.0 * inp.epsilon ** (-2.0 * kappa))
    if n / math.log(n) < need:
        raise PreconditionError(f"bound requires n / log n >= {need:.6g}; got {n / math.log(n):.6g}")
    rho = rho_epsilon(inp.epsilon, kappa, d)
    lip = lipschitz_coeff(inp.tau, inp.R, inp.B, L)
    factor = max(2.0, 24.0 * rho * lip * inp.R / math.sqrt(d))
    complexity = factor * math.sqrt(d * math.log(n) / n)
    conf = 1.0 - 2.0 * math.exp(-d / 2.0) - inp.delta - inp.fail_prob
    return BoundReport(
        bound=empirical_risk_tau + complexity,
        empirical_risk=empirical_risk_tau,
        complexity=complexity,
        gamma=inp.tau,
        kappa=kappa,
        confidence=conf,
        extras={"rho_epsilon": rho, "lipschitz": lip},
    )


def _check_alphas(alphas):
    a = np.asarray(alphas, dtype=float)
    if a.ndim != 1 or a.size == 0 or np.any((a <= 1.0) | (a >= 2.0)):
        raise ParameterError(f"per-layer tail indices must lie in (1, 2), got {alphas}")
    return a


def stable_coefficients(B: float, L: int, epsilon: float) -> tuple:
    """``(a, b_eps)`` with ``a = 6 sqrt(2) B 2^L L^1.5`` and ``b_eps = sqrt(2) B ((1+eps)^L - 1)``."""
    a = 6.0 * math.sqrt(2.0) * B * 2.0**L * L**1.5
    b = math.sqrt(2.0) * B * math.expm1(L * math.log1p(epsilon))
    return a, b


def gen_bound_stable(inp: BoundInputs, sigma0: float, alphas, empirical_margin_risk: float) -> BoundReport:
    """Explicit bound when layer ``l`` is i.i.d. SaS(alpha_l) with scales tied to ``sigma0``."""
    _check_risk(empirical_margin_risk)
    a_l = _check_alphas(alphas)
    if a_l.size != inp.L:
        raise ParameterError(f"got {a_l.size} tail indices for {inp.L} layers")
    if not sigma0 > 0.0:
        raise ParameterError(f"sigma0 must be positive, got {sigma0}")
    n, L, d = inp.n, inp.L, inp.d
    if n / math.log(n) < 10 * L:
        raise PreconditionError(f"bound requires n / log n >= 10 L = {10 * L}; got {n / math.log(n):.4g}")
    kappa = inp.kappa
    eps_k = epsilon_kappa(kappa, n)
    a, b_eps = stable_coefficients(inp.B, L, inp.epsilon)
    gamma = inp.tau + b_eps * sigma0**L * math.sqrt(d) / inp.tau
    complexity = (a * sigma0**L / inp.tau + 1.0) * math.sqrt((kappa + eps_k) * d * math.log(n) / n)
    alpha = float(a_l.min())
    conf = 1.0 - 3.0 * d ** (-alpha / (2.0 * L))
    return BoundReport(
        bound=empirical_margin_risk + complexity,
        empirical_risk=empirical_margin_risk,
        complexity=complexity,
        gamma=gamma,
        kappa=kappa,
        confidence=conf,
        extras={"a": a, "b_eps": b_eps, "epsilon_kappa": eps_k, "sigma2_target": stable_sigma2_target(sigma0, alphas, inp.d_l)},
    )


def stable_sigma2_target(sigma0: float, alphas, d_l) -> float:
    """Right-hand side ``[(4^(-1/alpha) sqrt(L) / 3) sigma0 d^(-(1/2 + 1/alpha))]^2``, ``alpha = min alpha_l``."""
    a_l = _check_alphas(alphas)
    L, d = len(d_l), sum(int(v) for v in d_l)
    alpha = float(a_l.min())
    return (4.0 ** (-1.0 / alpha) * math.sqrt(L) / 3.0 * sigma0 * d ** (-(0.5 + 1.0 / alpha))) ** 2


def stable_sigma2(sigmas, alphas, d_l) -> float:
    """``sum_l (d_l / d) (sigma_l / sigma_alpha(alpha_l))^2``."""
    a_l = _check_alphas(alphas)
    s = np.asarray(sigmas, dtype=float)
    dl = np.asarray(d_l, dtype=float)
    if not (s.shape == a_l.shape == dl.shape):
        raise ParameterError("sigmas, alphas and d_l must have one entry per layer")
    ratio = np.array([si / sigma_alpha(ai) for si, ai in zip(s, a_l)])
    return float(np.sum(dl / dl.sum() * ratio**2))


def stable_scale_condition(sigmas, alphas, d_l, sigma0: float, rtol: float = 1e-12) -> bool:
    """Whether the layer scales satisfy the variance identity tying them to ``sigma0``."""
    lhs = stable_sigma2(sigmas, alphas, d_l)
    rhs = stable_sigma2_target(sigma0, alphas, d_l)
    return bool(abs(lhs - rhs) <= rtol * max(abs(lhs), abs(rhs)))


def scales_for_sigma0(sigma0: float, alphas, d_l) -> np.ndarray:
    """Layer scales ``sigma_l = c * sigma_alpha(alpha_l)`` meeting the identity with equality."""
    a_l = _check_alphas(alphas)
    c = math.sqrt(stable_sigma2_target(sigma0, alphas, d_l))
    return np.array([c * sigma_alpha(a) for a in a_l])
