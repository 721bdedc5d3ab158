"""
Unit tests for the closed-form excess-risk bounds and covering allocations.
Every expected value is recomputed here from the formulas, independently of the engine.
"""
import itertools
import math
import os
import sys
import unittest
from dataclasses import replace

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(__file__))))

from offset_lab.engines.bounds.bounds import (alpha_products, best_bound, component_weights, cover_summary,
                                              evaluate_bound, excess_risk_from_log_cover,
                                              finite_class_offset_bound, generic_allocation, generic_log_cover,
                                              heavytail_bound, linear_cover_constant, log_cover_l11_linear,
                                              log_cover_rank_linear, minimize_over_delta, norm_bound,
                                              norm_complexity_terms, offset_generic_bound, penalty_constant,
                                              rank_allocation, rank_bound, subgaussian_bound)
from offset_lab.engines.tails.tails import heavy_tail_term, optimal_threshold, subgaussian_tail_term
from offset_lab.models.arch import ArchSpec, TailModel
from offset_lab.models.experiment import DeltaGrid
from offset_lab.models.reports import BoundReport
from offset_lab.utils.errors import InvalidParameterError
from offset_lab.utils.matrix_kit import RngStream
from UNIT_TEST.mock_data.generators import BUDGET_FIELDS, MockBudgetGenerator, all_ones_budget

SH = ArchSpec(kind='SH', T=4, d=2, k=2)
GRID = DeltaGrid().values()


def rel_close(a, b, tol=1e-10):
    return abs(a - b) <= tol * max(1.0, abs(b))


class TestPenaltyAndSkeleton(unittest.TestCase):

    def test_penalty_constants(self):
        self.assertEqual(penalty_constant(SH, all_ones_budget()), 4.0)
        self.assertEqual(penalty_constant(ArchSpec(kind='MH', H=3), all_ones_budget()), 8.0)
        self.assertEqual(penalty_constant(ArchSpec(kind='ML', L=2), all_ones_budget(kappa=2.0, B_w=3.0)), 16.0)

    def test_one_head_penalty_matches_single_head(self):
        budget = MockBudgetGenerator(seed=1).generate_budget()
        self.assertEqual(penalty_constant(ArchSpec(kind='MH', H=1), budget), penalty_constant(SH, budget))

    def test_skeleton_formula(self):
        report = excess_risk_from_log_cover(4.0, 8, 0.0, 1.0, 0.0)
        self.assertEqual(report.total, 1.0)
        self.assertEqual(report.discretization_term, 0.0)

    def test_skeleton_with_l11_cover(self):
        log_cover = log_cover_l11_linear(1.5, 0.8, 0.05, 3, 2)
        report = excess_risk_from_log_cover(2.5, 40, log_cover, 0.7, 0.05, approx=0.01)
        expected = 2 * 2.5 / 40 * (1 + 1.5 ** 2 * 0.8 ** 2 / 0.05 ** 2 * math.log(13)) + 8 * 0.7 * 0.05 + 0.01
        self.assertLess(abs(report.total - expected), 1e-12 * expected)

    def test_skeleton_rejects_bad_inputs(self):
        for kwargs in ({'n': 0}, {'delta': -1e-3}, {'log_cover': -1.0}, {'approx': -0.5}):
            args = {'penalty': 1.0, 'n': 10, 'log_cover': 1.0, 'kappa': 1.0, 'delta': 0.1, **kwargs}
            with self.assertRaises(InvalidParameterError):
                excess_risk_from_log_cover(**args)

    def test_total_is_sum_of_terms(self):
        report = BoundReport(family='norm', arch_kind='SH', n=10, delta=0.1, penalty_constant=1.0,
                             complexity_term=0.3, discretization_term=0.2, truncation_term=0.4,
                             approximation_term=0.05)
        self.assertLess(abs(report.total - sum(report.terms().values())), 1e-12)
        self.assertEqual(BoundReport.from_dict(report.to_dict()), report)


class TestLinearCovers(unittest.TestCase):

    def test_l11_cover(self):
        self.assertAlmostEqual(log_cover_l11_linear(1, 1, 1, 1, 1), math.log(3), places=14)
        self.assertTrue(rel_close(log_cover_l11_linear(2, 3, 0.5, 4, 2), 144 * math.log(17), 1e-14))

    def test_rank_cover(self):
        self.assertEqual(log_cover_rank_linear(1, 1, 2, 1), 0.0)
        self.assertAlmostEqual(log_cover_rank_linear(1, 1, 1, 2), math.log(8), places=14)
        self.assertTrue(rel_close(log_cover_rank_linear(2, 1, 0.5, 3), 1.5 * math.log(192), 1e-14))

    def test_nonpositive_scale_rejected(self):
        with self.assertRaises(InvalidParameterError):
            log_cover_l11_linear(1, 1, 0, 1, 1)
        with self.assertRaises(InvalidParameterError):
            log_cover_rank_linear(1, 1, -1, 1)

    def test_default_linear_constant(self):
        self.assertAlmostEqual(linear_cover_constant(ArchSpec(d=2, k=3), all_ones_budget()), math.log(13))
        self.assertEqual(linear_cover_constant(SH, all_ones_budget(C1=0.25)), 0.25)


class TestAlphaProducts(unittest.TestCase):

    def test_all_ones(self):
        self.assertEqual(alpha_products(all_ones_budget(), 3), [125.0, 25.0, 5.0])

    def test_zero_query_key_cap(self):
        self.assertEqual(alpha_products(all_ones_budget(B_QK=0.0), 4), [1.0] * 4)

    def test_factor_two(self):
        self.assertEqual(alpha_products(all_ones_budget(B_c=2.0, B_QK=0.0), 3), [8.0, 4.0, 2.0])


class TestNormBound(unittest.TestCase):

    def test_single_head_gamma(self):
        terms = norm_complexity_terms(all_ones_budget(C1=1.0), SH)
        self.assertAlmostEqual(terms['gamma_SH'], 4.0, places=14)

    def test_multi_head_gamma(self):
        terms = norm_complexity_terms(all_ones_budget(C1=1.0), ArchSpec(kind='MH', H=1))
        self.assertAlmostEqual(terms['gamma_MH'], 4.0, places=14)

    def test_multi_layer_terms(self):
        terms = norm_complexity_terms(all_ones_budget(C1=1.0), ArchSpec(kind='ML', L=2))
        a2, a1 = 5.0, 25.0
        tau2 = a2 ** (2 / 3) + (2 * a2) ** (2 / 3) + a2 ** (2 / 3)
        gamma = 50.0 ** (2 / 3) + 1 + 2 * a1 ** (2 / 3)
        self.assertEqual(len(terms['tau']), 1)
        self.assertLess(abs(terms['tau'][0] - tau2), 1e-12)
        self.assertLess(abs(terms['gamma_ML'] - gamma), 1e-12)
        self.assertLess(abs(terms['Gamma'] - gamma - tau2), 1e-12)

    def test_delta_annihilating_log(self):
        delta = 4.0 ** 1.5
        report = norm_bound(SH, all_ones_budget(C1=1.0), 50, delta)
        self.assertLess(abs(report.log_cover), 1e-12)
        self.assertTrue(rel_close(report.total, 8 / 50 + 8 * delta, 1e-12))

    def test_multi_layer_value(self):
        spec = ArchSpec(kind='ML', L=2)
        tau2 = 2 * 5.0 ** (2 / 3) + 10.0 ** (2 / 3)
        Gamma = 50.0 ** (2 / 3) + 1 + 2 * 25.0 ** (2 / 3) + tau2
        expected = 2 * 4.0 / 100 * (1 + math.log(Gamma ** 3 / 0.01)) + 0.8
        report = norm_bound(spec, all_ones_budget(C1=1.0), 100, 0.1)
        self.assertTrue(rel_close(report.total, expected))

    def test_composition_consistency(self):
        budget = MockBudgetGenerator(seed=3).generate_budget()
        delta = 1e-4
        Gamma = norm_complexity_terms(budget, SH)['Gamma']
        composed = excess_risk_from_log_cover(penalty_constant(SH, budget), 64, math.log(Gamma ** 3 / delta ** 2),
                                              budget.kappa, delta)
        self.assertEqual(norm_bound(SH, budget, 64, delta).total, composed.total)

    def test_rejects_nonpositive_delta(self):
        with self.assertRaises(InvalidParameterError):
            norm_bound(SH, all_ones_budget(), 10, 0.0)


def grid_minimum(r, C, beta, eps, B_X, points):
    """Minimum of the allocation objective over a grid on the constraint simplex."""
    r, C, beta = (np.asarray(v, dtype=np.float64) for v in (r, C, beta))
    ticks = (np.arange(points) + 0.5) / points
    best = math.inf
    for head in itertools.product(ticks, repeat=len(r) - 1):
        last = 1.0 - sum(head)
        if last <= 0:
            continue
        shares = np.array(head + (last,))
        eps_j = eps * shares / beta
        best = min(best, float(np.sum(r * C * np.log(r * B_X ** 2 / eps_j ** 2))))
    return best


class TestRankAllocation(unittest.TestCase):

    def test_symmetric_split(self):
        result = rank_allocation([1, 1], [0.5, 0.5], [1, 1], 1.0, 1.0)
        np.testing.assert_allclose(result.epsilons, [0.5, 0.5], atol=1e-15)

    def test_proportional_split(self):
        result = rank_allocation([1, 3], [1.0, 1.0], [1, 1], 4.0, 1.0)
        np.testing.assert_allclose(result.epsilons, [1.0, 3.0], atol=1e-14)
        self.assertAlmostEqual(result.constraint_value, 4.0, places=12)

    def test_grid_optimality(self):
        gen = RngStream(0, stream_id=99).generator()
        for trial in range(100):
            m = int(gen.integers(2, 5))
            r = gen.integers(1, 4, size=m).astype(float)
            C = gen.uniform(0.2, 2.0, size=m)
            beta = gen.uniform(0.2, 5.0, size=m)
            eps, B_X = float(gen.uniform(0.01, 1.0)), float(gen.uniform(0.5, 3.0))
            result = rank_allocation(r, C, beta, eps, B_X)
            self.assertLess(abs(result.constraint_value - eps), 1e-10)
            self.assertTrue(all(e > 0 for e in result.epsilons))
            oracle = grid_minimum(r, C, beta, eps, B_X, 60 if m <= 3 else 30)
            self.assertLessEqual(result.direct_objective, oracle + 1e-6 * abs(oracle), msg=f"trial {trial}")

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(1, 5), st.floats(0.1, 3), st.floats(0.1, 10)), min_size=1, max_size=6),
           st.floats(1e-6, 1.0))
    def test_constraint_holds(self, rows, eps):
        r, C, beta = zip(*rows)
        result = rank_allocation(r, C, beta, eps, 1.0)
        self.assertLess(abs(result.constraint_value - eps), 1e-10 * max(1.0, eps))

    def test_objective_mismatch_logs_warning(self):
        # b-form: 2 log 4, direct: 2 log 16
        with self.assertLogs('offset_lab.engines.bounds.bounds', level='WARNING') as logs:
            result = rank_allocation([1, 1], [1.0, 1.0], [1, 1], 1.0, 2.0)
        self.assertFalse(result.consistent)
        self.assertAlmostEqual(result.objective, 2 * math.log(4), places=12)
        self.assertAlmostEqual(result.direct_objective, 2 * math.log(16), places=12)
        self.assertTrue(any('allocation objectives differ' in line for line in logs.output))

    def test_invalid_inputs(self):
        with self.assertRaises(InvalidParameterError):
            rank_allocation([1, 1], [0.5], [1, 1], 1.0, 1.0)
        with self.assertRaises(InvalidParameterError):
            rank_allocation([1], [0.5], [1], 0.0, 1.0)
        with self.assertRaises(InvalidParameterError):
            rank_allocation([1], [0.5], [-1], 1.0, 1.0)
        with self.assertRaises(InvalidParameterError):
            rank_allocation([], [], [], 1.0, 1.0)


class TestRankBound(unittest.TestCase):

    def test_multi_layer_weights(self):
        components = component_weights(ArchSpec(kind='ML', L=1), all_ones_budget())
        self.assertEqual([c.name for c in components], ['w', 'c1', 'v1', 'QK1'])
        self.assertEqual([c.weight for c in components], [1.0, 5.0, 5.0, 10.0])

    def test_multi_head_weights_scale_with_heads(self):
        budget = MockBudgetGenerator(seed=5).generate_budget()
        single = component_weights(SH, budget)
        multi = component_weights(ArchSpec(kind='MH', H=3), budget)
        for a, b in zip(single, multi):
            self.assertAlmostEqual(b.weight, 3 * a.weight, places=12)

    def test_unit_ranks_equal_weights_are_symmetric(self):
        result = rank_allocation([1] * 4, [0.5] * 4, [2.0] * 4, 0.2, 1.0)
        np.testing.assert_allclose(result.epsilons, [0.025] * 4, rtol=1e-14)

    def test_single_head_value(self):
        report = rank_bound(SH, all_ones_budget(), [1, 1, 1, 1], 100, 0.1)
        weights = [1.0, 2.0, 1.0, 1.0]  # c, QK, v, w
        log_cover = sum(0.5 * math.log(4 * b / 0.01) for b in weights)
        expected = 2 * 4.0 / 100 * (1 + log_cover) + 0.8
        self.assertTrue(rel_close(report.total, expected))
        self.assertIn('allocation', report.inputs_echo)

    def test_default_ranks_are_budget_caps(self):
        budget = all_ones_budget(r_c=1, r_QK=2, r_v=1)
        explicit = rank_bound(SH, budget, [1, 2, 1, 1], 50, 0.05)
        self.assertEqual(rank_bound(SH, budget, None, 50, 0.05).total, explicit.total)

    def test_invalid_ranks(self):
        with self.assertRaises(InvalidParameterError):
            rank_bound(SH, all_ones_budget(), [1, 1, 1], 10, 0.1)
        with self.assertRaises(InvalidParameterError):
            rank_bound(SH, all_ones_budget(), [3, 1, 1, 1], 10, 0.1)
        with self.assertRaises(InvalidParameterError):
            rank_bound(SH, all_ones_budget(), [1, 1, 1, 2], 10, 0.1)

    def test_objective_mismatch_is_reported(self):
        report = rank_bound(SH, all_ones_budget(B_X=3.0), None, 10, 0.1)
        allocation = report.inputs_echo['allocation']
        if allocation['consistent']:
            self.assertEqual(report.notes, [])
        else:
            self.assertTrue(any('allocation objectives differ' in note for note in report.notes))


class TestFiniteClassBound(unittest.TestCase):

    def test_values(self):
        self.assertEqual(finite_class_offset_bound(1, 1, 1.0), 0.5)
        self.assertAlmostEqual(finite_class_offset_bound(math.e, 1, 1.0), 1.0, places=14)

    def test_invalid(self):
        with self.assertRaises(InvalidParameterError):
            finite_class_offset_bound(0, 1, 1.0)


class TestGenericFamily(unittest.TestCase):

    def test_allocation_attains_closed_form_cover(self):
        budget = MockBudgetGenerator(seed=6).generate_budget()
        for spec in (SH, ArchSpec(kind='MH', H=2), ArchSpec(kind='ML', L=2)):
            delta = 0.03
            components = component_weights(spec, budget)
            eps = generic_allocation(spec, budget, delta)
            self.assertLess(abs(sum(c.weight * e for c, e in zip(components, eps)) - delta), 1e-12)
            direct = sum(log_cover_l11_linear(budget.B_x, c.cap, e, c.rows, c.cols) for c, e in zip(components, eps))
            self.assertTrue(rel_close(direct, generic_log_cover(spec, budget, delta), 1e-10))

    def test_report_family(self):
        report = offset_generic_bound(SH, all_ones_budget(), 100, 0.1)
        self.assertEqual(report.family, 'offset-generic')
        self.assertTrue(rel_close(report.log_cover, generic_log_cover(SH, all_ones_budget(), 0.1)))

    def test_cover_summary_components(self):
        summary = cover_summary(ArchSpec(kind='ML', L=2), all_ones_budget(), 0.1)
        self.assertEqual(len(summary['components']), 7)
        self.assertIn('eps_rank', summary['components'][0])
        self.assertIsNotNone(summary['allocation'])


class TestUnboundedFamilies(unittest.TestCase):

    def test_subgaussian_bound(self):
        tail = TailModel(regime='subgaussian', nu=1.0, T=4, d=2)
        budget = all_ones_budget(tail=tail)
        M = optimal_threshold(tail, 128)
        report = subgaussian_bound(SH, budget, 128, 0.05)
        capped = norm_bound(SH, budget.with_input_cap(M), 128, 0.05)
        self.assertEqual(report.family, 'subgaussian')
        self.assertEqual(report.truncation_threshold, M)
        self.assertEqual(report.complexity_term, capped.complexity_term)
        self.assertEqual(report.truncation_term, subgaussian_tail_term(1.0, tail, M))

    def test_heavytail_bound(self):
        tail = TailModel(regime='heavytail', beta=4.0, C=1.0, x_min=1.0, T=4, d=2, B_psi=0.5)
        budget = all_ones_budget(kappa=2.0, tail=tail)
        report = heavytail_bound(SH, budget, 64, 0.05)
        M = 8.0
        robust = replace(budget.with_input_cap(M), kappa=1.0)
        self.assertEqual(report.truncation_threshold, M)
        self.assertEqual(report.complexity_term, rank_bound(SH, robust, None, 64, 0.05).complexity_term)
        self.assertTrue(rel_close(report.discretization_term, 8 * 1.0 * 0.05, 1e-14))
        self.assertEqual(report.truncation_term, heavy_tail_term(tail, 2.0, M))

    def test_missing_tail_model(self):
        with self.assertRaises(InvalidParameterError):
            subgaussian_bound(SH, all_ones_budget(), 64, 0.1)
        with self.assertRaises(InvalidParameterError):
            evaluate_bound('heavytail', SH, all_ones_budget(), 64, 0.1)

    def test_unknown_family(self):
        with self.assertRaises(InvalidParameterError):
            evaluate_bound('pac-bayes', SH, all_ones_budget(), 64, 0.1)


class TestDeltaMinimisation(unittest.TestCase):

    def test_ties_keep_earliest(self):
        def flat(delta):
            return BoundReport(family='norm', arch_kind='SH', n=1, delta=delta, penalty_constant=1.0,
                               complexity_term=1.0, discretization_term=0.0)
        self.assertEqual(minimize_over_delta(flat, [0.3, 0.1, 0.2]).delta, 0.3)

    def test_best_bound_is_grid_minimum(self):
        budget = all_ones_budget()
        best = best_bound('norm', SH, budget, 200, GRID)
        totals = [norm_bound(SH, budget, 200, d).total for d in GRID]
        self.assertEqual(best.total, min(totals))
        self.assertEqual(len(GRID), 32)

    def test_empty_grid(self):
        with self.assertRaises(InvalidParameterError):
            best_bound('norm', SH, all_ones_budget(), 10, [])


class TestMonotonicity(unittest.TestCase):
    """Bounds shrink with n and grow with every constant."""

    FAMILIES = ('offset-generic', 'norm', 'rank')
    SPECS = (SH, ArchSpec(kind='MH', H=2), ArchSpec(kind='ML', L=2))

    def test_nonincreasing_in_n(self):
        budget = MockBudgetGenerator(seed=7).generate_budget()
        for spec, family in itertools.product(self.SPECS, self.FAMILIES):
            totals = [best_bound(family, spec, budget, n, GRID).total for n in (16, 64, 256, 1024)]
            self.assertTrue(all(b <= a * (1 + 1e-12) for a, b in zip(totals, totals[1:])), (family, spec.kind))

    def test_nondecreasing_in_constants(self):
        mock = MockBudgetGenerator(seed=8)
        for budget in mock.generate_budgets(count=6):
            for spec, family, name in itertools.product(self.SPECS, self.FAMILIES, BUDGET_FIELDS):
                bigger = replace(budget, **{name: getattr(budget, name) * 1.5})
                before = best_bound(family, spec, budget, 100, GRID).total
                after = best_bound(family, spec, bigger, 100, GRID).total
                self.assertGreaterEqual(after, before * (1 - 1e-12), (family, spec.kind, name))

    def test_nondecreasing_in_heads_and_layers(self):
        budget = all_ones_budget()
        for family in self.FAMILIES:
            heads = [best_bound(family, ArchSpec(kind='MH', H=H), budget, 100, GRID).total for H in (1, 2, 3)]
            layers = [best_bound(family, ArchSpec(kind='ML', L=L), budget, 100, GRID).total for L in (1, 2, 3)]
            for series in (heads, layers):
                self.assertTrue(all(b >= a * (1 - 1e-12) for a, b in zip(series, series[1:])), family)


if __name__ == '__main__':
    unittest.main()
