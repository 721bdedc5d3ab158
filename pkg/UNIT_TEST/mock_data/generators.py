"""
Mock data generators for the lab tests.
Creates random architectures, budgets, tail models and finite classes.
"""
import numpy as np
from faker import Faker

from offset_lab.models.arch import ArchSpec, ParamBudget, TailModel
from offset_lab.models.reports import FunctionClassSample
from offset_lab.utils.matrix_kit import RngStream

BUDGET_FIELDS = ('B_v', 'B_c', 'B_QK', 'B_w', 'B_x', 'B_X', 'B', 'kappa', 'L_sigma')


class MockBudgetGenerator:
    """Generates reproducible mock lab inputs for testing"""

    def __init__(self, seed=0):
        self.fake = Faker()
        self.fake.seed_instance(seed)
        self.seed = seed

    def constant(self, low=0.2, high=3.0):
        return self.fake.pyfloat(min_value=low, max_value=high, right_digits=3)

    def generate_arch(self, kind=None):
        """
        Generate a desk-scale architecture

        Args:
            kind: 'SH', 'MH' or 'ML'; random when None

        Returns:
            ArchSpec
        """
        kind = kind or self.fake.random_element(('SH', 'MH', 'ML'))
        d = self.fake.random_int(1, 3)
        return ArchSpec(
            kind=kind,
            T=self.fake.random_int(2, 5),
            d=d,
            k=d if kind == 'ML' else self.fake.random_int(1, 3),
            H=self.fake.random_int(2, 3) if kind == 'MH' else 1,
            L=self.fake.random_int(1, 3) if kind == 'ML' else 1,
            activation=self.fake.random_element(('relu', 'tanh', 'identity')),
        )

    def generate_budget(self, **overrides):
        """Random positive bound constants; ``overrides`` pins individual fields."""
        values = {name: self.constant() for name in BUDGET_FIELDS}
        values['L_sigma'] = 1.0
        values.update(overrides)
        return ParamBudget(**values)

    def generate_budgets(self, count=25, **overrides):
        return [self.generate_budget(**overrides) for _ in range(count)]

    def generate_tail(self, regime, T, d):
        if regime == 'subgaussian':
            return TailModel(regime='subgaussian', nu=self.constant(0.5, 2.0), T=T, d=d)
        return TailModel(regime='heavytail', beta=self.constant(2.5, 6.0), C=1.0, x_min=1.0, T=T, d=d)

    def generate_class_sample(self, n_functions, n, value_cap=1.0, nonnegative=False):
        """Random finite class with entries in [0, cap] or [-cap, cap]."""
        gen = RngStream(self.seed, stream_id=self.fake.random_int(0, 10**6)).generator()
        low = 0.0 if nonnegative else -value_cap
        G = gen.uniform(low, value_cap, size=(n_functions, n))
        return FunctionClassSample(G=G, value_cap=value_cap)


def all_ones_budget(**overrides):
    values = {name: 1.0 for name in BUDGET_FIELDS}
    values.update(overrides)
    return ParamBudget(**values)
