"""
Unit tests for truncation, tail terms, thresholds and the robust loss.
"""
import math
import os
import sys
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(__file__))))

from UNIT_TEST.mock_data.generators import MockBudgetGenerator
from offset_lab.engines.tails.tails import (heavy_tail_first_moment, heavy_tail_moment, heavy_tail_probability,
                                            heavy_tail_term, optimal_threshold, robust_loss,
                                            robust_loss_derivative, second_moment_proxy,
                                            subgaussian_tail_moment, subgaussian_tail_probability,
                                            subgaussian_tail_term, threshold_objective, truncate_dataset,
                                            truncate_inputs)
from offset_lab.models.arch import TailModel
from offset_lab.utils.errors import ConfigError, InvalidParameterError
from offset_lab.utils.matrix_kit import Distribution, RngStream, norm_fro, sample_matrices

SUBGAUSSIAN = TailModel(regime='subgaussian', nu=1.0, T=4, d=2)


def heavy(beta=4.0, C=1.0, T=1, d=1, B_psi=1.0):
    return TailModel(regime='heavytail', beta=beta, C=C, x_min=1.0, T=T, d=d, B_psi=B_psi)


def subgaussian_inputs(tail, count, seed):
    sd = tail.nu / math.sqrt(max(tail.T, tail.d))
    return sample_matrices(Distribution.gaussian(sd), count, tail.T, tail.d, RngStream(seed))


def mean_and_se(values):
    values = np.asarray(values, dtype=np.float64)
    return values.mean(), values.std(ddof=1) / math.sqrt(len(values))


class TestSecondMomentProxy(unittest.TestCase):

    def test_identity(self):
        self.assertAlmostEqual(second_moment_proxy([np.eye(2)]), 1.0, places=14)

    def test_zero_samples(self):
        self.assertEqual(second_moment_proxy([np.zeros((3, 2))] * 4), 0.0)

    def test_gaussian_samples(self):
        X = sample_matrices(Distribution.gaussian(1.0), 10_000, 3, 2, RngStream(2))
        self.assertLess(abs(second_moment_proxy(list(X)) - 3.0), 0.15)

    def test_empty(self):
        with self.assertRaises(InvalidParameterError):
            second_moment_proxy([])


class TestSubgaussianTail(unittest.TestCase):

    def test_zero_threshold(self):
        tail = TailModel(regime='subgaussian', nu=1.5, T=3, d=2, C_trunc=2.0)
        self.assertAlmostEqual(subgaussian_tail_term(0.7, tail, 0.0), 2.0 * 0.7 * 5 * 2 * 1.5 ** 2, places=12)

    def test_strictly_decreasing_beyond_two_nu(self):
        grid = np.linspace(2.0, 12.0, 200)
        values = [subgaussian_tail_term(1.0, SUBGAUSSIAN, M) for M in grid]
        self.assertTrue(all(b < a for a, b in zip(values, values[1:])))

    def test_threshold_formula(self):
        self.assertAlmostEqual(optimal_threshold(SUBGAUSSIAN, 50), math.sqrt(2 * math.log(300)), places=14)
        tail = TailModel(regime='subgaussian', nu=2.0, T=1, d=1)
        self.assertAlmostEqual(optimal_threshold(tail, 4), 2.0 * math.sqrt(2 * math.log(8)), places=14)

    def test_threshold_needs_two_samples(self):
        with self.assertRaises(InvalidParameterError):
            optimal_threshold(SUBGAUSSIAN, 1)

    def test_tail_term_at_threshold_is_log_n_over_n(self):
        for n in (10, 100, 1000, 2048):
            M = optimal_threshold(SUBGAUSSIAN, n)
            expected = SUBGAUSSIAN.C_trunc * 2 * (math.log(6 * n) + 1) / n
            self.assertLess(abs(subgaussian_tail_term(1.0, SUBGAUSSIAN, M) - expected), 1e-12 * expected)

    def test_threshold_is_near_grid_optimum(self):
        grid = np.logspace(math.log10(0.5), math.log10(20.0), 200)
        for n in (100, 1000, 2048):
            best = min(threshold_objective(SUBGAUSSIAN, n, M, 100.0) for M in grid)
            chosen = threshold_objective(SUBGAUSSIAN, n, optimal_threshold(SUBGAUSSIAN, n), 100.0)
            self.assertLessEqual(chosen, 1.1 * best)

    def test_generated_tails_at_threshold(self):
        generator = MockBudgetGenerator(seed=4)
        for _ in range(20):
            tail = generator.generate_tail('subgaussian', T=3, d=2)
            M = optimal_threshold(tail, 256)
            expected = tail.C_trunc * 2 * tail.nu ** 2 * (math.log(5 * 256) + 1) / 256
            self.assertLess(abs(subgaussian_tail_term(1.0, tail, M) - expected), 1e-12 * expected)
            heavy_tail = generator.generate_tail('heavytail', T=3, d=2)
            self.assertAlmostEqual(optimal_threshold(heavy_tail, 256),
                                   256.0 ** (1.0 / (heavy_tail.beta - 2)), places=9)

    def test_threshold_objective(self):
        M, n = 3.0, 200
        expected = 5.0 / n * (1 + 2 * math.log(M)) + subgaussian_tail_term(2.0, SUBGAUSSIAN, M)
        self.assertEqual(threshold_objective(SUBGAUSSIAN, n, M, 5.0, kappa=2.0), expected)

    def test_wrong_regime(self):
        with self.assertRaises(InvalidParameterError):
            subgaussian_tail_moment(heavy(), 1.0)

    def test_tail_moment_dominates_monte_carlo(self):
        X = subgaussian_inputs(SUBGAUSSIAN, 100_000, seed=3)
        sq = np.sum(X ** 2, axis=(1, 2))
        norms = np.sqrt(sq)
        for M in (0.0, 0.5, 1.0, 2.0, 3.0):
            mean, se = mean_and_se(sq * (norms > M))
            self.assertLessEqual(mean, subgaussian_tail_moment(SUBGAUSSIAN, M) + 3 * se)
            prob, prob_se = mean_and_se(norms >= M)
            self.assertLessEqual(prob, subgaussian_tail_probability(SUBGAUSSIAN, M) + 3 * prob_se)


class TestHeavyTail(unittest.TestCase):

    def test_hand_computed_term(self):
        self.assertEqual(heavy_tail_term(heavy(), 1.0, 1.0), 2.0)

    def test_first_moment(self):
        self.assertAlmostEqual(heavy_tail_first_moment(heavy(), 2.0), 4.0 / 3.0 * 2.0 ** -3, places=15)

    def test_strictly_decreasing(self):
        grid = np.linspace(0.1, 20.0, 200)
        values = [heavy_tail_term(heavy(), 1.0, M) for M in grid]
        self.assertTrue(all(b < a for a, b in zip(values, values[1:])))

    def test_threshold(self):
        self.assertAlmostEqual(optimal_threshold(heavy(), 16), 4.0, places=14)

    def test_tail_index_must_exceed_two(self):
        with self.assertRaises(InvalidParameterError):
            heavy_tail_term(heavy(beta=2.0), 1.0, 1.0)
        with self.assertRaises(ConfigError):
            heavy(beta=1.5).validate()

    def test_spectral_tail_law(self):
        tail = heavy(beta=3.0, T=3, d=2)
        X = sample_matrices(Distribution.pareto(3.0, 1.0), 100_000, 3, 2, RngStream(4))
        norms = np.linalg.norm(X, ord=2, axis=(1, 2))
        for t in (2.0, 4.0, 8.0, 16.0, 32.0):
            prob, se = mean_and_se(norms > t)
            self.assertLessEqual(prob, heavy_tail_probability(tail, t) + 3 * se)

    def test_tail_moments_dominate_monte_carlo(self):
        tail = heavy(beta=5.0, T=2, d=2)
        X = sample_matrices(Distribution.pareto(5.0, 1.0), 100_000, 2, 2, RngStream(5))
        norms = np.linalg.norm(X, ord=2, axis=(1, 2))
        for M in (1.0, 2.0, 4.0, 8.0):
            mean, se = mean_and_se(norms ** 2 * (norms > M))
            self.assertLessEqual(mean, heavy_tail_moment(tail, M) + 3 * se)
            mean, se = mean_and_se(norms * (norms > M))
            self.assertLessEqual(mean, heavy_tail_first_moment(tail, M) + 3 * se)


class TestRobustLoss(unittest.TestCase):

    def test_zero(self):
        self.assertEqual(robust_loss(0.0, 1.0), 0.0)

    def test_hand_computed(self):
        self.assertAlmostEqual(robust_loss(1.0, 1.0), math.log(2.5), places=15)

    def test_derivative_matches_finite_differences(self):
        gen = RngStream(6).generator()
        h = 1e-6
        for ell, alpha in zip(gen.uniform(0.01, 1.0, 50), gen.uniform(0.1, 3.0, 50)):
            fd = (robust_loss(ell + h, alpha) - robust_loss(ell - h, alpha)) / (2 * h)
            self.assertLess(abs(fd - robust_loss_derivative(ell, alpha)), 1e-7)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 1e3), st.floats(1e-3, 10.0))
    def test_bounded_by_base_loss(self, ell, alpha):
        value = robust_loss(ell, alpha)
        self.assertGreaterEqual(value, 0.0)
        self.assertLessEqual(value, ell * (1 + 1e-12) + 1e-300)
        self.assertLessEqual(robust_loss_derivative(ell, alpha), 1.0)

    def test_small_alpha_limit(self):
        for ell in np.linspace(0.0, 10.0, 21):
            self.assertLessEqual(abs(robust_loss(ell, 1e-4) - ell), 1e-6 * max(1.0, ell))

    def test_vectorised(self):
        out = robust_loss(np.array([0.0, 1.0]), 1.0)
        np.testing.assert_allclose(out, [0.0, math.log(2.5)])

    def test_negative_loss(self):
        with self.assertRaises(InvalidParameterError):
            robust_loss(-0.1, 1.0)
        with self.assertRaises(InvalidParameterError):
            robust_loss(1.0, 0.0)


class TestTruncation(unittest.TestCase):

    def test_inside_ball_unchanged(self):
        data = [(np.full((2, 2), 0.1), 1.0), (np.zeros((2, 2)), -2.0)]
        out, rate = truncate_dataset(data, 1.0)
        self.assertEqual(rate, 0.0)
        for (X, y), (Xt, yt) in zip(data, out):
            np.testing.assert_array_equal(X, Xt)
            self.assertEqual(y, yt)

    def test_tiny_radius_truncates_everything(self):
        X = sample_matrices(Distribution.gaussian(1.0), 50, 3, 2, RngStream(7))
        out, rate = truncate_dataset([(X_i, 0.0) for X_i in X], 1e-9)
        self.assertEqual(rate, 1.0)
        self.assertTrue(all(norm_fro(X_i) <= 1e-9 * (1 + 1e-12) for X_i, _ in out))

    def test_idempotent_and_non_increasing(self):
        X = sample_matrices(Distribution.gaussian(2.0), 200, 3, 2, RngStream(8))
        once, _ = truncate_inputs(X, 1.5)
        twice, moved = truncate_inputs(once, 1.5)
        np.testing.assert_allclose(twice, once, rtol=1e-14, atol=1e-14)
        self.assertFalse(moved.any())
        self.assertTrue(np.all(np.linalg.norm(once.reshape(200, -1), axis=1)
                               <= np.linalg.norm(X.reshape(200, -1), axis=1) * (1 + 1e-14)))

    def test_empty_dataset(self):
        self.assertEqual(truncate_dataset([], 1.0), ([], 0.0))

    def test_rate_matches_tail_bound(self):
        n = 100
        M = optimal_threshold(SUBGAUSSIAN, n)
        X = subgaussian_inputs(SUBGAUSSIAN, 10_000, seed=9)
        _, rate = truncate_dataset([(X_i, 0.0) for X_i in X], M)
        se = math.sqrt(max(rate * (1 - rate), 1e-12) / len(X))
        self.assertLessEqual(rate, subgaussian_tail_probability(SUBGAUSSIAN, M) + 3 * se)

    def test_nonpositive_radius(self):
        with self.assertRaises(InvalidParameterError):
            truncate_dataset([(np.eye(2), 0.0)], 0.0)


if __name__ == '__main__':
    unittest.main()
