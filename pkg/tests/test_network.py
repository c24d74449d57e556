import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htcomp import network as nw
from htcomp.errors import DivergenceError, DomainError, ParameterError
from htcomp.seeding import RngSeed, as_generator


def gradcheck(net, X, y, loss, h=1e-6):
    """Max entrywise relative error between backprop and central differences."""
    _, grads = nw.loss_and_grad(net, X, y, loss)
    worst = 0.0
    for l, W in enumerate(net.layers):
        fd = np.zeros_like(W)
        step = h * max(1.0, np.abs(W).max())
        for idx in np.ndindex(W.shape):
            plus, minus = net.copy(), net.copy()
            plus.layers[l][idx] += step
            minus.layers[l][idx] -= step
            fd[idx] = (nw.loss_and_grad(plus, X, y, loss)[0] - nw.loss_and_grad(minus, X, y, loss)[0]) / (2 * step)
        g = grads[l]
        scale = np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-7)
        worst = max(worst, float(np.max(np.abs(g - fd) / scale)))
    return worst


class TestFcnWeights:
    def test_depth_one_rejected(self):
        with pytest.raises(DomainError):
            nw.FcnWeights([np.eye(2)])

    def test_shape_chain(self):
        with pytest.raises(DomainError):
            nw.FcnWeights([np.ones((3, 2)), np.ones((1, 4))])

    def test_sizes_and_flat(self):
        net = nw.FcnWeights([np.ones((3, 2)), 2 * np.ones((1, 3))])
        assert net.sizes == (2, 3, 1) and net.n_params == 9
        back = net.with_flat(net.flat())
        for a, b in zip(back.layers, net.layers):
            np.testing.assert_array_equal(a, b)
        assert net.norm() == pytest.approx(math.sqrt(6 + 12))

    def test_init_uniform_range(self):
        net = nw.init_uniform([16, 8, 3], RngSeed(300))
        assert np.abs(net.layers[0]).max() <= 1 / 4
        assert np.abs(net.layers[1]).max() <= 1 / math.sqrt(8)
        with pytest.raises(ParameterError):
            nw.init_uniform([4, 2], RngSeed(0))


class TestForward:
    def test_identity_on_nonnegative(self):
        net = nw.FcnWeights([np.eye(3), np.eye(3)])
        np.testing.assert_array_equal(nw.forward(net, [1.0, 0.0, 2.0]), [1.0, 0.0, 2.0])

    def test_zero_input(self):
        net = nw.init_uniform([4, 5, 2], RngSeed(301))
        np.testing.assert_array_equal(nw.forward(net, np.zeros(4)), 0.0)

    def test_hand(self):
        net = nw.FcnWeights([[[1.0, -1.0]], [[2.0]]])
        assert nw.forward(net, [1.0, 3.0])[0] == 0.0
        assert nw.forward(net, [3.0, 1.0])[0] == 4.0

    def test_batch_equals_rows(self):
        net = nw.init_uniform([4, 6, 3], RngSeed(302))
        X = as_generator(RngSeed(303)).standard_normal((5, 4))
        np.testing.assert_allclose(nw.forward(net, X), np.stack([nw.forward(net, x) for x in X]), rtol=1e-14)

    def test_shape_mismatch(self):
        net = nw.init_uniform([4, 6, 3], RngSeed(304))
        with pytest.raises(DomainError):
            nw.forward(net, np.ones(5))

    @settings(max_examples=30, deadline=None)
    @given(c=st.floats(0.01, 100.0), seed=st.integers(0, 1000))
    def test_positive_homogeneity(self, c, seed):
        net = nw.init_uniform([3, 4, 4, 2], RngSeed(seed))
        x = as_generator(RngSeed(seed, 1)).standard_normal(3)
        scaled = net.copy()
        scaled.layers[0] = c * scaled.layers[0]
        np.testing.assert_allclose(nw.forward(scaled, x), c * nw.forward(net, x), rtol=1e-10, atol=1e-12)


class TestMargins:
    def test_clear_margin(self):
        assert nw.margin_loss(0, [5.0, 1.0], 0.0) == 0.0

    def test_tie_counts_as_error(self):
        assert nw.margin_loss(0, [1.0, 1.0], 0.0) == 1.0
        assert nw.margin_loss(1, [1.0, 1.0], 0.0) == 1.0

    def test_three_class(self):
        assert nw.margin_loss(0, [3.0, 1.0, 2.0], 1.5) == 1.0

    def test_single_output_rejected(self):
        with pytest.raises(DomainError):
            nw.margin_loss(0, [1.0], 0.0)

    def test_surrogate_branches(self):
        # margins 0.0, 2.0 and 0.5 for gamma = 0 (first two) and the ramp value
        assert nw.surrogate_margin_loss(0, [1.0, 1.0], 0.0, 2.0) == 1.0
        assert nw.surrogate_margin_loss(0, [3.0, 1.0], 0.0, 2.0) == 0.0
        assert nw.surrogate_margin_loss(0, [1.5, 1.0], 0.0, 2.0) == pytest.approx(0.75)
        assert nw.surrogate_margin_loss(0, [9.0, 1.0], 0.0, 2.0) == 0.0

    def test_surrogate_tau(self):
        with pytest.raises(ParameterError):
            nw.surrogate_margin_loss(0, [1.0, 0.0], 0.0, 0.0)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), tau=st.floats(0.1, 5.0))
    def test_surrogate_lipschitz(self, seed, tau):
        g = as_generator(RngSeed(seed))
        a, b = g.standard_normal(3), g.standard_normal(3)
        y = int(g.integers(3))
        diff = abs(nw.surrogate_margin_loss(y, a, 0.0, tau) - nw.surrogate_margin_loss(y, b, 0.0, tau))
        assert diff <= math.sqrt(2) / tau * np.linalg.norm(a - b) + 1e-12


class TestRisk:
    def _net(self):
        return nw.FcnWeights([np.eye(2), np.eye(2)])

    def test_all_correct(self):
        data = nw.Dataset([[5.0, 0.0], [0.0, 5.0]], [0, 1])
        assert nw.empirical_risk(self._net(), data, gamma=0.0) == 0.0
        assert nw.empirical_risk(self._net(), data) == 0.0

    def test_all_wrong(self):
        data = nw.Dataset([[5.0, 0.0], [0.0, 5.0]], [1, 0])
        assert nw.empirical_risk(self._net(), data, gamma=0.0) == 1.0

    def test_counting(self):
        X = [[3.0, 0.0], [0.5, 0.0], [0.0, 3.0], [0.0, 0.2], [4.0, 0.0]]
        data = nw.Dataset(X, [0, 0, 1, 1, 0])
        assert nw.empirical_risk(self._net(), data, gamma=1.0) == pytest.approx(0.4)

    def test_surrogate_between(self):
        X = [[3.0, 0.0], [0.5, 0.0]]
        data = nw.Dataset(X, [0, 0])
        r = nw.empirical_risk(self._net(), data, gamma=0.0, tau=1.0)
        assert r == pytest.approx(0.25)

    def test_empty(self):
        data = nw.Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int))
        with pytest.raises(DomainError):
            nw.empirical_risk(self._net(), data)

    def test_feature_bound(self):
        with pytest.raises(DomainError):
            nw.Dataset([[3.0, 4.0]], [0], B=4.0)
        assert nw.Dataset([[3.0, 4.0]], [0]).B == 5.0

    def test_relative_accuracy(self):
        net = self._net()
        X = [[1.0, 0.0]] * 4 + [[0.0, 1.0]]
        data = nw.Dataset(X, [0, 0, 0, 0, 1])
        assert nw.relative_test_accuracy(net, net, data) == 1.0
        swap = nw.FcnWeights([np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]])])
        assert nw.relative_test_accuracy(net, swap, data) == 0.0
        partial = nw.FcnWeights([np.eye(2), np.array([[1.0, 0.0], [0.0, 0.0]])])
        # the last sample becomes a tie, which argmax resolves to class 0
        assert nw.relative_test_accuracy(net, partial, data) == pytest.approx(0.8)

    def test_relative_accuracy_zero_base(self):
        net = nw.FcnWeights([np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]])])
        data = nw.Dataset([[1.0, 0.0]], [0])
        with pytest.raises(DomainError):
            nw.relative_test_accuracy(net, net, data)


class TestGradients:
    @pytest.mark.parametrize("loss", ["nll", "squared"])
    def test_backprop_vs_finite_differences(self, loss):
        g = as_generator(RngSeed(310))
        for trial in range(3):
            net = nw.init_uniform([4, 6, 5, 3], RngSeed(311, trial))
            X = g.standard_normal((7, 4))
            y = g.integers(0, 3, 7)
            assert gradcheck(net, X, y, loss) <= 1e-5


class TestSgd:
    def test_quadratic_two_steps(self):
        data = nw.Dataset([[1.0]], [1.0])
        cfg = nw.SgdConfig(0.5, 1, 1, loss="squared")
        assert nw.sgd_train(np.zeros(1), data, cfg).weights[0] == 0.5
        cfg = dataclasses.replace(cfg, iters=2)
        assert nw.sgd_train(np.zeros(1), data, cfg).weights[0] == 0.75

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            nw.SgdConfig(0.0, 1, 10)
        with pytest.raises(ParameterError):
            nw.SgdConfig(0.1, 0, 10)
        with pytest.raises(ParameterError):
            nw.SgdConfig(0.1, 1, 10, loss="hinge")
        data = nw.Dataset([[1.0]], [1.0])
        with pytest.raises(ParameterError):
            nw.sgd_train(np.zeros(1), data, nw.SgdConfig(0.1, 2, 1))

    def test_deterministic(self):
        data = _mixture(RngSeed(320))
        net0 = nw.init_uniform([2, 8, 2], RngSeed(321))
        cfg = nw.SgdConfig(0.1, 8, 200, seed=RngSeed(322))
        a = nw.sgd_train(net0, data, cfg)
        b = nw.sgd_train(net0, data, cfg)
        assert a.weights.flat().tobytes() == b.weights.flat().tobytes()
        assert not a.diverged and a.iterations == 200

    def test_training_reduces_loss(self):
        data = _mixture(RngSeed(323))
        net0 = nw.init_uniform([2, 16, 2], RngSeed(324))
        traj = nw.sgd_train(net0, data, nw.SgdConfig(0.2, 16, 500, seed=RngSeed(325)))
        assert traj.losses[-50:].mean() < traj.losses[:50].mean()
        assert nw.accuracy(traj.weights, data) > 0.85

    def test_epoch_batches_without_replacement(self):
        s = nw._BatchSampler(10, 3, False, RngSeed(326))
        rows = [s.next() for _ in range(3)]
        assert len(set(np.concatenate(rows).tolist())) == 9

    def test_with_replacement_block_matches_next(self):
        a = nw._BatchSampler(50, 4, True, RngSeed(327))
        b = nw._BatchSampler(50, 4, True, RngSeed(327))
        np.testing.assert_array_equal(a.take(1500), np.stack([b.next() for _ in range(1500)]))

    def test_divergence_guard(self):
        data = nw.Dataset([[10.0]], [1.0])
        traj = nw.sgd_train(np.zeros(1), data, nw.SgdConfig(1.0, 1, 1000, loss="squared"))
        assert traj.diverged and traj.diverged_at < 1000
        assert traj.final_norm > nw.DIVERGENCE_NORM or not math.isfinite(traj.final_norm)
        with pytest.raises(DivergenceError):
            nw.ergodic_tail_average(traj, 5)


class TestTailAverage:
    def test_zero_step_like(self):
        # a vanishingly small step leaves the iterates at the start
        data = nw.Dataset([[1.0]], [1.0])
        traj = nw.sgd_train(np.array([0.3]), data, nw.SgdConfig(1e-300, 1, 0, loss="squared"))
        assert nw.ergodic_tail_average(traj, 10)[0] == pytest.approx(0.3, rel=1e-15)

    def test_one_extra_is_next_iterate(self):
        data = _mixture(RngSeed(330))
        net0 = nw.init_uniform([2, 4, 2], RngSeed(331))
        cfg = nw.SgdConfig(0.1, 4, 20, seed=RngSeed(332))
        avg = nw.ergodic_tail_average(nw.sgd_train(net0, data, cfg), 1)
        nxt = nw.sgd_train(net0, data, dataclasses.replace(cfg, iters=21)).weights
        for a, b in zip(avg.layers, nxt.layers):
            np.testing.assert_allclose(a, b, rtol=1e-14)

    def test_trajectory_untouched(self):
        data = _mixture(RngSeed(333))
        traj = nw.sgd_train(nw.init_uniform([2, 4, 2], RngSeed(334)), data, nw.SgdConfig(0.1, 4, 10, seed=RngSeed(335)))
        a = nw.ergodic_tail_average(traj, 7)
        b = nw.ergodic_tail_average(traj, 7)
        assert a.flat().tobytes() == b.flat().tobytes()

    def test_average_closer_than_last_iterate(self):
        g = as_generator(RngSeed(336))
        wins = 0
        for s in range(20):
            X = g.standard_normal((200, 5))
            w_true = g.standard_normal(5)
            data = nw.Dataset(X, X @ w_true + 0.5 * g.standard_normal(200))
            w_ls = np.linalg.lstsq(X, data.labels, rcond=None)[0]
            traj = nw.sgd_train(np.zeros(5), data, nw.SgdConfig(0.05, 1, 500, True, RngSeed(337, s), "squared"))
            avg = nw.ergodic_tail_average(traj, 500)
            wins += np.linalg.norm(avg - w_ls) < np.linalg.norm(traj.weights - w_ls)
        assert wins >= 15


class TestEnsemble:
    def test_matches_single_chains(self):
        g = as_generator(RngSeed(340))
        X = g.standard_normal((60, 4))
        data = nw.Dataset(X, X @ g.standard_normal(4) + g.standard_normal(60))
        cfg = nw.SgdConfig(0.05, 3, 1100, True, RngSeed(341), "squared")
        w0 = np.zeros(4)
        ens = nw.sgd_linear_ensemble(w0, data, cfg, 5, 1200)
        for m in range(5):
            traj = nw.sgd_train(w0, data, dataclasses.replace(cfg, seed=cfg.seed.child(m)))
            np.testing.assert_allclose(ens.tail_average[m], nw.ergodic_tail_average(traj, 1200), rtol=1e-10, atol=1e-10)

    def test_divergent_chains_flagged(self):
        g = as_generator(RngSeed(342))
        X = 3 * g.standard_normal((50, 3))
        data = nw.Dataset(X, g.standard_normal(50))
        ens = nw.sgd_linear_ensemble(np.zeros(3), data, nw.SgdConfig(0.5, 1, 200, True, RngSeed(343), "squared"), 4, 10)
        assert ens.diverged.all() and np.isnan(ens.tail_average).all()


def _mixture(seed, n=200):
    g = as_generator(seed)
    y = np.arange(n) % 2
    X = g.standard_normal((n, 2)) + 2.5 * np.stack([y == 0, y == 1], axis=1)
    return nw.Dataset(X, y)
