"""Bias-free fully connected ReLU networks, margin losses and plain SGD.

Two model families share the SGD driver:

* :class:`FcnWeights` -- ``f(x) = W_L relu(W_{L-1} ... relu(W_1 x))`` trained
  with softmax negative log-likelihood (``loss="nll"``) or squared loss
  against one-hot targets (``loss="squared"``);
* a plain weight vector (1-D array) -- linear regression ``f(x) = x . w``
  with squared loss ``(x . w - y)^2 / 2``.

Labels are 0-based class indices.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DivergenceError, DomainError, ParameterError
from .seeding import RngSeed, as_generator

DIVERGENCE_NORM = 1e12
_LOSSES = ("nll", "squared")


@dataclass
class FcnWeights:
    layers: list

    def __post_init__(self):
        self.layers = [np.array(W, dtype=float) for W in self.layers]
        if len(self.layers) < 2:
            raise DomainError(f"a network needs at least 2 layers, got {len(self.layers)}")
        for i, W in enumerate(self.layers):
            if W.ndim != 2 or W.size == 0:
                raise DomainError(f"layer {i} must be a non-empty matrix, got shape {W.shape}")
        for i in range(1, len(self.layers)):
            if self.layers[i].shape[1] != self.layers[i - 1].shape[0]:
                raise DomainError(
                    f"layer {i} has {self.layers[i].shape[1]} columns but layer {i - 1} "
                    f"has {self.layers[i - 1].shape[0]} rows"
                )

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def sizes(self) -> tuple:
        """``(h_0, h_1, ..., h_L)``."""
        return (self.layers[0].shape[1],) + tuple(W.shape[0] for W in self.layers)

    @property
    def n_params(self) -> int:
        return sum(W.size for W in self.layers)

    def flat(self) -> np.ndarray:
        return np.concatenate([W.ravel() for W in self.layers])

    def with_flat(self, v) -> "FcnWeights":
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_params,):
            raise DomainError(f"expected {self.n_params} parameters, got shape {v.shape}")
        out, start = [], 0
        for W in self.layers:
            out.append(v[start : start + W.size].reshape(W.shape))
            start += W.size
        return FcnWeights(out)

    def norm(self) -> float:
        return float(math.sqrt(sum(float(np.sum(W * W)) for W in self.layers)))

    def layer_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(W) for W in self.layers])

    def copy(self) -> "FcnWeights":
        return FcnWeights([W.copy() for W in self.layers])


def init_uniform(sizes: Sequence[int], rng=None) -> FcnWeights:
    """Layers drawn i.i.d. uniform on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 3 or min(sizes) < 1:
        raise ParameterError(f"need >= 3 positive layer sizes (L >= 2), got {sizes}")
    gen = as_generator(rng)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = 1.0 / math.sqrt(fan_in)
        layers.append(gen.uniform(-lim, lim, size=(fan_out, fan_in)))
    return FcnWeights(layers)


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    B: float | None = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.labels = np.asarray(self.labels)
        if self.features.shape[0] != self.labels.shape[0]:
            raise DomainError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        norms = np.linalg.norm(self.features, axis=1) if self.features.size else np.zeros(0)
        max_norm = float(norms.max()) if norms.size else 0.0
        if self.B is None:
            self.B = max_norm
        elif max_norm > self.B * (1.0 + 1e-12):
            raise DomainError(f"feature norm {max_norm} exceeds the bound B={self.B}")

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class SgdConfig:
    eta: float
    b: int
    iters: int
    replacement: bool = False
    seed: RngSeed = field(default_factory=RngSeed)
    loss: str = "nll"

    def __post_init__(self):
        if not (self.eta > 0.0 and math.isfinite(self.eta)):
            raise ParameterError(f"eta must be positive, got {self.eta}")
        if int(self.b) < 1:
            raise ParameterError(f"batch size must be >= 1, got {self.b}")
        if int(self.iters) < 0:
            raise ParameterError(f"iters must be >= 0, got {self.iters}")
        if self.loss not in _LOSSES:
            raise ParameterError(f"loss must be one of {_LOSSES}, got {self.loss!r}")


# -- forward pass and losses ------------------------------------------------

def _relu(z):
    return np.maximum(z, 0.0)


def forward(net: FcnWeights, x) -> np.ndarray:
    """Network output for one input vector or a batch of row vectors."""
    x = np.asarray(x, dtype=float)
    d_in = net.layers[0].shape[1]
    if x.shape[-1] != d_in or x.ndim not in (1, 2):
        raise DomainError(f"expected inputs of dimension {d_in}, got shape {x.shape}")
    a = x
    for W in net.layers[:-1]:
        a = _relu(a @ W.T)
    return a @ net.layers[-1].T


def margin(out, y) -> np.ndarray | float:
    """``out[y] - max_{j != y} out[j]``, row-wise for 2-D ``out``."""
    out = np.asarray(out, dtype=float)
    single = out.ndim == 1
    out2 = np.atleast_2d(out)
    if out2.shape[1] < 2:
        raise DomainError("margins need at least 2 outputs")
    y = np.atleast_1d(np.asarray(y, dtype=int))
    if np.any((y < 0) | (y >= out2.shape[1])):
        raise DomainError(f"labels must lie in [0, {out2.shape[1] - 1}]")
    rows = np.arange(out2.shape[0])
    correct = out2[rows, y]
    others = out2.copy()
    others[rows, y] = -np.inf
    m = correct - others.max(axis=1)
    return float(m[0]) if single else m


def margin_loss(y, out, gamma: float = 0.0):
    """1 when the margin is at most ``gamma``, else 0."""
    m = margin(out, y)
    return (np.asarray(m) <= gamma).astype(float) if np.ndim(m) else float(m <= gamma)


def surrogate_margin_loss(y, out, gamma: float, tau: float):
    """Ramp from 1 (margin <= gamma) down to 0 (margin >= gamma + tau)."""
    if not (tau > 0.0):
        raise ParameterError(f"tau must be positive, got {tau}")
    m = np.asarray(margin(out, y), dtype=float)
    val = np.clip(1.0 - (m - gamma) / tau, 0.0, 1.0)
    return float(val) if val.ndim == 0 else val


def empirical_risk(net: FcnWeights, data: Dataset, gamma=None, tau=None) -> float:
    """Mean loss over ``data``.

    ``gamma=None`` gives the plain 0-1 error of the arg-max prediction; a
    ``gamma`` alone gives the margin loss; ``gamma`` with ``tau`` gives the
    ramp surrogate.
    """
    if data.n == 0:
        raise DomainError("empirical risk of an empty dataset")
    out = forward(net, data.features)
    if gamma is None:
        return float(np.mean(predict_labels(out) != data.labels.astype(int)))
    if tau is None:
        return float(np.mean(margin_loss(data.labels, out, gamma)))
    return float(np.mean(surrogate_margin_loss(data.labels, out, gamma, tau)))


def predict_labels(out) -> np.ndarray:
    # argmax takes the lowest index among ties
    return np.argmax(np.atleast_2d(out), axis=1)


def accuracy(net: FcnWeights, data: Dataset) -> float:
    if data.n == 0:
        raise DomainError("accuracy of an empty dataset")
    return float(np.mean(predict_labels(forward(net, data.features)) == data.labels.astype(int)))


def relative_test_accuracy(net: FcnWeights, pruned_net: FcnWeights, data: Dataset) -> float:
    base = accuracy(net, data)
    if base == 0.0:
        raise DomainError("unpruned accuracy is zero; relative accuracy undefined")
    return accuracy(pruned_net, data) / base


# -- gradients ----------------------------------------------------------------

def _output_grad(out, labels, loss):
    """d(mean loss)/d(out) and the mean loss."""
    b = out.shape[0]
    labels = np.asarray(labels, dtype=int)
    rows = np.arange(b)
    if loss == "nll":
        shifted = out - out.max(axis=1, keepdims=True)
        logz = np.log(np.sum(np.exp(shifted), axis=1))
        value = float(np.mean(logz - shifted[rows, labels]))
        g = np.exp(shifted - logz[:, None])
        g[rows, labels] -= 1.0
    else:
        target = np.zeros_like(out)
        target[rows, labels] = 1.0
        diff = out - target
        value = float(0.5 * np.mean(np.sum(diff * diff, axis=1)))
        g = diff
    return g / b, value


def loss_and_grad(net: FcnWeights, X, labels, loss: str = "nll"):
    """Mean training loss over the rows of ``X`` and its exact gradient."""
    if loss not in _LOSSES:
        raise ParameterError(f"loss must be one of {_LOSSES}, got {loss!r}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    pre, acts = [], [X]
    a = X
    for W in net.layers[:-1]:
        z = a @ W.T
        pre.append(z)
        a = _relu(z)
        acts.append(a)
    out = a @ net.layers[-1].T
    g, value = _output_grad(out, labels, loss)
    grads = [None] * net.depth
    for l in range(net.depth - 1, -1, -1):
        grads[l] = g.T @ acts[l]
        if l > 0:
            g = (g @ net.layers[l]) * (pre[l - 1] > 0.0)
    return value, grads


# -- SGD ----------------------------------------------------------------------

_BLOCK = 1024


class _BatchSampler:
    """Deterministic minibatch index stream, produced in blocks of batches."""

    def __init__(self, n: int, b: int, replacement: bool, seed):
        if not 1 <= b <= n:
            raise ParameterError(f"batch size must satisfy 1 <= b <= n = {n}, got {b}")
        self.n, self.b, self.replacement = n, b, replacement
        self.gen = as_generator(seed)
        self._perm = None
        self._pos = n
        self._buf = np.empty((0, b), dtype=np.int64)
        self._next = 0

    def _fill(self):
        if self.replacement:
            self._buf = self.gen.integers(0, self.n, size=(_BLOCK, self.b))
        else:
            rows = []
            for _ in range(_BLOCK):
                if self._pos + self.b > self.n:
                    self._perm = self.gen.permutation(self.n)
                    self._pos = 0
                rows.append(self._perm[self._pos : self._pos + self.b])
                self._pos += self.b
            self._buf = np.array(rows)
        self._next = 0

    def next(self) -> np.ndarray:
        if self._next >= self._buf.shape[0]:
            self._fill()
        idx = self._buf[self._next]
        self._next += 1
        return idx

    def take(self, count: int) -> np.ndarray:
        """The next ``count`` batches as a ``(count, b)`` array."""
        parts, need = [], count
        while need > 0:
            if self._next >= self._buf.shape[0]:
                self._fill()
            chunk = self._buf[self._next : self._next + need]
            self._next += chunk.shape[0]
            need -= chunk.shape[0]
            parts.append(chunk)
        return parts[0] if len(parts) == 1 else np.concatenate(parts)


@dataclass
class Trajectory:
    weights: object  # FcnWeights, or 1-D array in regression mode
    iterations: int
    diverged: bool
    diverged_at: int | None
    final_norm: float
    losses: np.ndarray
    data: Dataset = field(repr=False)
    cfg: SgdConfig = field(repr=False)
    _sampler: _BatchSampler = field(repr=False)


def _is_linear(model) -> bool:
    return isinstance(model, np.ndarray) and model.ndim == 1


def _model_norm(model) -> float:
    if _is_linear(model):
        return float(np.linalg.norm(model))
    return model.norm()


def _step(model, data, idx, cfg):
    Xb = data.features[idx]
    yb = data.labels[idx]
    if _is_linear(model):
        res = Xb @ model - yb
        value = 0.5 * float(np.mean(res * res))
        return model - cfg.eta * (Xb.T @ res) / Xb.shape[0], value
    value, grads = loss_and_grad(model, Xb, yb, cfg.loss)
    return FcnWeights([W - cfg.eta * G for W, G in zip(model.layers, grads)]), value


def _run(model, data, cfg, sampler, iters, on_iterate=None):
    losses = np.empty(iters)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(iters):
            model, losses[k] = _step(model, data, sampler.next(), cfg)
            nrm = _model_norm(model)
            if not math.isfinite(nrm) or nrm > DIVERGENCE_NORM:
                return model, k + 1, True, nrm, losses[: k + 1]
            if on_iterate is not None:
                on_iterate(model)
    return model, iters, False, _model_norm(model), losses


def _check_model(model, data):
    if _is_linear(model):
        if data.features.shape[1] != model.size:
            raise DomainError(
                f"{model.size} weights but features of dimension {data.features.shape[1]}"
            )
        return np.array(model, dtype=float)
    if not isinstance(model, FcnWeights):
        raise DomainError("model must be FcnWeights or a 1-D weight vector")
    if data.features.shape[1] != model.layers[0].shape[1]:
        raise DomainError("feature dimension does not match the first layer")
    return model.copy()


def sgd_train(net0, data: Dataset, cfg: SgdConfig) -> Trajectory:
    """Run ``cfg.iters`` steps of ``w <- w - eta * mean_{i in batch} grad l_i(w)``.

    The run halts early, with ``diverged=True``, once ``||w||`` exceeds
    :data:`DIVERGENCE_NORM` or stops being finite.
    """
    model = _check_model(net0, data)
    sampler = _BatchSampler(data.n, int(cfg.b), cfg.replacement, cfg.seed)
    model, done, diverged, nrm, losses = _run(model, data, cfg, sampler, int(cfg.iters))
    return Trajectory(model, done, diverged, done if diverged else None, nrm, losses, data, cfg, sampler)


def ergodic_tail_average(traj: Trajectory, extra_iters: int):
    """Mean of the next ``extra_iters`` SGD iterates after ``traj``.

    The trajectory is left untouched; its minibatch stream is continued on a
    copy.
    """
    if traj.diverged:
        raise DivergenceError(traj.diverged_at, traj.final_norm)
    if int(extra_iters) < 1:
        raise ParameterError(f"extra_iters must be >= 1, got {extra_iters}")
    sampler = copy.deepcopy(traj._sampler)
    linear = _is_linear(traj.weights)
    start = traj.weights.copy()
    acc = np.zeros_like(start) if linear else [np.zeros_like(W) for W in start.layers]

    def add(model):
        if linear:
            acc.__iadd__(model)
        else:
            for A, W in zip(acc, model.layers):
                A += W

    model, done, diverged, nrm, _ = _run(start, traj.data, traj.cfg, sampler, int(extra_iters), add)
    if diverged:
        raise DivergenceError(traj.iterations + done, nrm)
    if linear:
        return acc / extra_iters
    return FcnWeights([A / extra_iters for A in acc])


@dataclass
class EnsembleResult:
    tail_average: np.ndarray  # (chains, d); rows of diverged chains are NaN
    final: np.ndarray
    diverged: np.ndarray


def sgd_linear_ensemble(
    w0, data: Dataset, cfg: SgdConfig, chains: int, tail_iters: int
) -> EnsembleResult:
    """Many independent linear-regression SGD chains advanced in lock-step.

    Chain ``m`` uses stream ``cfg.seed.child(m)`` and reproduces
    ``sgd_train`` followed by ``ergodic_tail_average`` with that seed.  A
    diverged chain is frozen and reported.
    """
    w0 = np.asarray(w0, dtype=float)
    if w0.ndim != 1 or w0.size != data.features.shape[1]:
        raise DomainError("w0 must be a weight vector matching the feature dimension")
    if int(chains) < 1 or int(tail_iters) < 1:
        raise ParameterError("need chains >= 1 and tail_iters >= 1")
    M, b = int(chains), int(cfg.b)
    samplers = [_BatchSampler(data.n, b, cfg.replacement, cfg.seed.child(m)) for m in range(M)]
    X, y = data.features, np.asarray(data.labels, dtype=float)
    W = np.tile(w0, (M, 1))
    acc = np.zeros_like(W)
    alive = np.ones(M, dtype=bool)
    burn, total = int(cfg.iters), int(cfg.iters) + int(tail_iters)
    for block_start in range(0, total, _BLOCK):
        steps = min(_BLOCK, total - block_start)
        idx = np.stack([s.take(steps) for s in samplers], axis=1)
        with np.errstate(over="ignore", invalid="ignore"):
            for j in range(steps):
                k = block_start + j
                Xb = X[idx[j]]  # (M, b, d)
                res = np.einsum("mbd,md->mb", Xb, W) - y[idx[j]]
                upd = W - cfg.eta * np.einsum("mbd,mb->md", Xb, res) / b
                W[alive] = upd[alive]
                nrm = np.linalg.norm(W, axis=1)
                blown = alive & ~(np.isfinite(nrm) & (nrm <= DIVERGENCE_NORM))
                alive &= ~blown
                if k >= burn:
                    acc[alive] += W[alive]
    avg = acc / tail_iters
    avg[~alive] = np.nan
    return EnsembleResult(avg, W, ~alive)
