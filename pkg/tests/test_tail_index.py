import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htcomp.errors import DegenerateSampleError, DomainError, ParameterError
from htcomp.seeding import RngSeed, as_generator
from htcomp.stable import EllipticStableParams, StableParams, sample_elliptic_sas, sample_sas
from htcomp.tail_index import TailIndexEstimate, center_median, estimate_alpha, mean_layer_alpha


class TestCenterMedian:
    def test_odd(self):
        c, m = center_median([1, 2, 3])
        np.testing.assert_array_equal(c, [-1, 0, 1])
        assert m == 2

    def test_constant(self):
        c, m = center_median([5, 5, 5, 5])
        np.testing.assert_array_equal(c, [0, 0, 0, 0])
        assert m == 5

    def test_even(self):
        c, m = center_median([4, 1, 7, 2])
        np.testing.assert_array_equal(c, [1, -2, 4, -1])
        assert m == 3

    def test_columnwise(self):
        c, m = center_median([[1, 10], [3, 30], [2, 20]])
        np.testing.assert_array_equal(m, [2, 20])
        np.testing.assert_array_equal(c[:, 1], [-10, 10, 0])

    def test_empty(self):
        with pytest.raises(DomainError):
            center_median([])


class TestEstimateAlpha:
    def test_sas_17(self):
        x = sample_sas(StableParams(1.7), 10**6, RngSeed(100))
        est = estimate_alpha(x)
        assert 1.65 <= est.alpha_hat <= 1.75
        assert est.k1 == 1000 and est.k2 == 1000 and est.n_used == 10**6

    def test_gaussian(self):
        x = as_generator(RngSeed(101)).standard_normal(10**6)
        assert 1.95 <= estimate_alpha(x).alpha_hat <= 2.05

    def test_cauchy(self):
        x = as_generator(RngSeed(102)).standard_cauchy(10**6)
        assert 0.97 <= estimate_alpha(x).alpha_hat <= 1.03

    def test_remainder_dropped(self):
        x = sample_sas(StableParams(1.5), 1010, RngSeed(103))
        est = estimate_alpha(x, k1=100, center=False)
        assert (est.k1, est.k2, est.n_used) == (100, 10, 1000)
        assert est.alpha_hat == estimate_alpha(x[:1000], k1=100, center=False).alpha_hat

    def test_default_block_is_isqrt(self):
        est = estimate_alpha(sample_sas(StableParams(1.5), 99, RngSeed(104)), center=False)
        assert est.k1 == 9 and est.k2 == 11

    def test_hand_formula(self):
        x = np.array([1.0, 2.0, -4.0, 3.0])
        est = estimate_alpha(x, k1=2, center=False)
        inv = (np.mean(np.log([3.0, 1.0])) - np.mean(np.log([1, 2, 4, 3]))) / math.log(2)
        assert est.alpha_hat == pytest.approx(1 / inv, rel=1e-14)

    def test_no_clamping(self):
        # light tails push the estimate above 2
        x = as_generator(RngSeed(105)).uniform(-1, 1, 10**5)
        assert estimate_alpha(x).alpha_hat > 2.0

    def test_zero_after_centering(self):
        with pytest.raises(DegenerateSampleError):
            estimate_alpha(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), k1=2)

    def test_zero_sample(self):
        with pytest.raises(DegenerateSampleError):
            estimate_alpha(np.array([0.0, 1.0, 2.0, 3.0]), k1=2, center=False)

    def test_block_size_errors(self):
        x = sample_sas(StableParams(1.5), 100, RngSeed(106))
        with pytest.raises(ParameterError):
            estimate_alpha(x, k1=1)
        with pytest.raises(DomainError):
            estimate_alpha(x, k1=60)

    def test_vector_samples(self):
        X = sample_elliptic_sas(EllipticStableParams(1.5, 4), 2 * 10**5, RngSeed(107))
        est = estimate_alpha(X)
        assert abs(est.alpha_hat - 1.5) < 0.08

    def test_shuffle_is_deterministic(self):
        x = np.sort(sample_sas(StableParams(1.5), 10**4, RngSeed(108)))
        a = estimate_alpha(x, shuffle=RngSeed(1)).alpha_hat
        b = estimate_alpha(x, shuffle=RngSeed(1)).alpha_hat
        assert a == b
        assert abs(a - 1.5) < 0.15

    def test_consistency_in_k(self):
        errs = []
        for K in (10**4, 10**5, 10**6):
            e = [abs(estimate_alpha(sample_sas(StableParams(1.5), K, RngSeed(109, s))).alpha_hat - 1.5) for s in range(20)]
            errs.append(np.median(e))
        assert errs[0] > errs[1] > errs[2]

    @settings(max_examples=40, deadline=None)
    @given(c=st.floats(min_value=1e-3, max_value=1e3), neg=st.booleans())
    def test_scale_invariance(self, c, neg):
        x = sample_sas(StableParams(1.6), 4000, RngSeed(110))
        c = -c if neg else c
        a = estimate_alpha(x).alpha_hat
        b = estimate_alpha(c * x).alpha_hat
        assert abs(a - b) <= 1e-12 * abs(a) + 1e-12


class TestMeanLayerAlpha:
    def test_single(self):
        assert mean_layer_alpha([1.5]) == 1.5

    def test_two(self):
        assert mean_layer_alpha([1.2, 1.8]) == pytest.approx(1.5)

    def test_three_estimates(self):
        ests = [TailIndexEstimate(a, 2, 2, 4) for a in (1.3, 1.6, 1.9)]
        assert mean_layer_alpha(ests) == pytest.approx(1.6)

    def test_empty(self):
        with pytest.raises(DomainError):
            mean_layer_alpha([])
