"""Report Models - evaluated bounds, allocations and offset-complexity estimates.

Key Models:
    BoundReport: one evaluated excess-risk bound split into named terms
    AllocationResult: optimal split of a covering scale across parameter components
    OffsetEstimate: exact or Monte Carlo offset Rademacher complexity
    FunctionClassSample: excess-loss values g(X_i; f_j) of a finite class on a sample

Term layout of a BoundReport:
    total = complexity_term + discretization_term + truncation_term + approximation_term

    complexity_term      (2 * penalty / n) * (1 + log covering number)
    discretization_term  8 * kappa * delta
    truncation_term      tail bias of the unbounded regimes (0 when inputs are bounded)
    approximation_term   inf over the class of the excess risk (caller supplied)
"""

import io
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from ..utils.errors import InvalidParameterError

BOUND_FAMILIES = ('offset-generic', 'norm', 'rank', 'subgaussian', 'heavytail')


@dataclass
class BoundReport:
    family: str
    arch_kind: str
    n: int
    delta: float
    penalty_constant: float
    complexity_term: float
    discretization_term: float
    truncation_term: float = 0.0
    approximation_term: float = 0.0
    log_cover: float = 0.0
    truncation_threshold: Optional[float] = None
    inputs_echo: Dict[str, Any] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    @property
    def total(self) -> float:
        return (self.complexity_term + self.discretization_term
                + self.truncation_term + self.approximation_term)

    def terms(self) -> Dict[str, float]:
        return {
            'complexity_term': self.complexity_term,
            'discretization_term': self.discretization_term,
            'truncation_term': self.truncation_term,
            'approximation_term': self.approximation_term,
        }

    def to_dict(self) -> Dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out['total'] = self.total
        return out

    @classmethod
    def from_dict(cls, raw):
        raw = {k: v for k, v in raw.items() if k != 'total'}
        return cls(**raw)


@dataclass
class AllocationResult:
    """Closed-form covering allocation.

    objective is the b_i form sum r_i C_i log(b_i^2 / eps^2); direct_objective is
    the allocation objective sum r_i C_i log(r_i B_X^2 / eps_i^2) evaluated at the
    returned eps_i. ``consistent`` is False when the two disagree.
    """
    epsilons: List[float]
    multiplier: float
    objective: float
    direct_objective: float
    b: List[float]
    constraint_value: float
    consistent: bool

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class OffsetEstimate:
    value: float
    std_error: float
    method: str
    n_draws: int
    beta: float

    def __post_init__(self):
        # exact enumeration has no sampling error
        if self.method == 'exact' and self.std_error != 0.0:
            raise InvalidParameterError("exact estimates carry no standard error")
        if self.std_error < 0:
            raise InvalidParameterError("standard error must be nonnegative")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw):
        return cls(**raw)


@dataclass
class FunctionClassSample:
    """G[j, i] = g(X_i; f_j): row = function, column = sample point."""
    G: np.ndarray
    value_cap: float

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, dtype=np.float64))
        if self.G.size == 0 or not np.all(np.isfinite(self.G)):
            raise InvalidParameterError("class sample must be non-empty and finite")
        observed = float(np.abs(self.G).max())
        if self.value_cap < observed:
            raise InvalidParameterError("value_cap is below the largest |entry|",
                                        {'value_cap': self.value_cap, 'max_abs': observed})

    @property
    def n_functions(self):
        return self.G.shape[0]

    @property
    def n(self):
        return self.G.shape[1]

    @classmethod
    def from_values(cls, G):
        G = np.atleast_2d(np.asarray(G, dtype=np.float64))
        return cls(G=G, value_cap=float(np.abs(G).max()))

    def with_row(self, row):
        G = np.vstack([self.G, np.asarray(row, dtype=np.float64)[None, :]])
        return FunctionClassSample(G=G, value_cap=max(self.value_cap, float(np.abs(row).max())))

    def to_dict(self):
        return {'G': self.G.tolist(), 'value_cap': self.value_cap}

    @classmethod
    def from_dict(cls, raw):
        return cls(G=np.array(raw['G'], dtype=np.float64), value_cap=float(raw['value_cap']))

    def to_csv(self) -> str:
        """Matrix dump: one row per function, columns x0..x{n-1}; value_cap recomputed on load."""
        frame = pd.DataFrame(self.G, columns=[f'x{i}' for i in range(self.n)])
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, float_format='%.17g')
        return buffer.getvalue()

    @classmethod
    def from_csv(cls, text: str):
        frame = pd.read_csv(io.StringIO(text), float_precision='round_trip')
        return cls.from_values(frame.to_numpy(dtype=np.float64))
