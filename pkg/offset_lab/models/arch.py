"""Architecture Models - descriptors, parameter budgets and weight containers.

Defines the records the transformer, bounds and experiment engines pass around.

Key Models:
    ArchSpec: which architecture (single-head, multi-head, multi-layer) and its widths
    ParamBudget: every constant the excess-risk bounds consume
    TailModel: input tail law for the unbounded regimes
    TransformerParams: concrete weights per layer/head plus the readout vector
    BudgetAudit: per-constraint measured norms vs caps

Shapes:
    X            T x d   input sequence, row ``cls_index`` is the [CLS] token
    W_QK[l][h]   d x d   query-key product (stored directly, never as factors)
    W_v[l][h]    d x k   value map
    W_c[l][h]    k x d   output map
    w            d       readout

Single-head uses one layer and one head; multi-head uses one layer and H heads;
multi-layer uses L layers of one head each and needs k == d.

JSON:
    Every record has ``to_dict()`` and a strict ``from_dict()``. Unknown keys are
    errors so that a typo in a bound constant never silently falls back to a
    default.
"""

from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional

import numpy as np

from ..utils.errors import InvalidParameterError
from ..utils.validation import ValidationResult, check_choice, check_keys, check_positive

ARCH_KINDS = ('SH', 'MH', 'ML')
BUDGET_MODES = ('spectral', 'l11', 'rank')
TAIL_REGIMES = ('subgaussian', 'heavytail')

ACTIVATIONS = {
    'relu': lambda z: np.maximum(z, 0.0),
    'tanh': np.tanh,
    'identity': lambda z: z,
}
# Lipschitz constant of each supported activation; all satisfy sigma(0) = 0
ACTIVATION_LIPSCHITZ = {'relu': 1.0, 'tanh': 1.0, 'identity': 1.0}


def _finish(result, own_result, context):
    if own_result:
        result.raise_if_invalid(context)


@dataclass(frozen=True)
class ArchSpec:
    kind: str = 'SH'
    T: int = 4
    d: int = 2
    k: int = 2
    H: int = 1
    L: int = 1
    activation: str = 'relu'
    cls_index: int = 0

    @property
    def n_layers(self):
        return self.L if self.kind == 'ML' else 1

    @property
    def n_heads(self):
        return self.H if self.kind == 'MH' else 1

    def activate(self, Z):
        return ACTIVATIONS[self.activation](Z)

    def validate(self, result: Optional[ValidationResult] = None) -> ValidationResult:
        own = result is None
        result = result or ValidationResult()
        check_choice(result, 'arch.kind', self.kind, ARCH_KINDS)
        check_choice(result, 'arch.activation', self.activation, ACTIVATIONS)
        for name in ('T', 'd', 'k', 'H', 'L'):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                result.add_error(f'arch.{name}', f"must be an integer >= 1, got {value!r}", "Use a positive count")
        if isinstance(self.T, int) and not (0 <= self.cls_index < self.T):
            result.add_error('arch.cls_index', f"must lie in [0, T), got {self.cls_index}",
                             "Point cls_index at an existing row")
        if self.kind == 'ML' and self.k != self.d:
            result.add_error('arch.k', "multi-layer blocks need k == d", "Set k equal to d")
        _finish(result, own, 'architecture')
        return result

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw, result: Optional[ValidationResult] = None):
        own = result is None
        result = result or ValidationResult()
        before = len(result.errors)
        raw = check_keys(result, 'arch', raw, [f.name for f in fields(cls)])
        spec = cls(**raw) if len(result.errors) == before else cls()
        if len(result.errors) == before:
            spec.validate(result)
        _finish(result, own, 'architecture')
        return spec


@dataclass(frozen=True)
class TailModel:
    """Tail law of the input matrices.

    subgaussian: nu is the exponent scale of P(||X||_F >= t) <= (T+d) exp(-t^2 / 2 nu^2)
    heavytail:   P(|X_ij| > x) <= C x^{-beta}, beta > 2, entries drawn with magnitude >= x_min
    """
    regime: str = 'subgaussian'
    nu: Optional[float] = None
    beta: Optional[float] = None
    C: Optional[float] = None
    x_min: Optional[float] = None
    T: int = 4
    d: int = 2
    B_psi: float = 1.0
    alpha: float = 1.0
    C_trunc: float = 2.0

    def validate(self, result: Optional[ValidationResult] = None) -> ValidationResult:
        own = result is None
        result = result or ValidationResult()
        check_choice(result, 'tail.regime', self.regime, TAIL_REGIMES)
        heavy = (self.beta, self.C, self.x_min)
        if self.regime == 'subgaussian':
            if self.nu is None:
                result.add_error('tail.nu', "sub-Gaussian regime needs nu", "Set nu > 0")
            else:
                check_positive(result, 'tail.nu', self.nu)
            if any(v is not None for v in heavy):
                result.add_error('tail', "heavy-tail parameters set in the sub-Gaussian regime",
                                 "Remove beta, C and x_min")
        elif self.regime == 'heavytail':
            if self.nu is not None:
                result.add_error('tail.nu', "nu set in the heavy-tail regime", "Remove nu")
            for name, value in zip(('beta', 'C', 'x_min'), heavy):
                if value is None:
                    result.add_error(f'tail.{name}', "heavy-tail regime needs this parameter", f"Set {name}")
                else:
                    check_positive(result, f'tail.{name}', value)
            if self.beta is not None and self.beta <= 2:
                result.add_error('tail.beta', f"tail index must exceed 2, got {self.beta}", "Use beta > 2")
        for name in ('B_psi', 'alpha', 'C_trunc'):
            check_positive(result, f'tail.{name}', getattr(self, name))
        _finish(result, own, 'tail model')
        return result

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw, result: Optional[ValidationResult] = None):
        own = result is None
        result = result or ValidationResult()
        before = len(result.errors)
        raw = check_keys(result, 'tail', raw, [f.name for f in fields(cls)], required=['regime'])
        tail = cls(**raw) if len(result.errors) == before else cls()
        if len(result.errors) == before:
            tail.validate(result)
        _finish(result, own, 'tail model')
        return tail


@dataclass(frozen=True)
class ParamBudget:
    """Every constant used by the bound families.

    B_v, B_c, B_QK, B_w   weight caps (spectral or l1,1 depending on budget_mode; w is l2)
    B_x                   cap on the [CLS] row norm
    B_X                   cap on ||X||_{2->2}
    B                     cap on |f*(X)|
    kappa                 Lipschitz constant of the excess loss in the prediction
    L_sigma               activation Lipschitz constant
    r_v, r_c, r_QK        rank caps (rank mode; None means full rank)
    C1                    override for the linear-covering constant (None: log(2dk+1))
    """
    B_v: float = 1.0
    B_c: float = 1.0
    B_QK: float = 1.0
    B_w: float = 1.0
    B_x: float = 1.0
    B_X: float = 1.0
    B: float = 1.0
    kappa: float = 1.0
    L_sigma: float = 1.0
    r_v: Optional[int] = None
    r_c: Optional[int] = None
    r_QK: Optional[int] = None
    budget_mode: str = 'spectral'
    C1: Optional[float] = None
    tail: Optional[TailModel] = None

    def with_input_cap(self, M):
        """Budget with B_X and B_x replaced by a truncation threshold M."""
        return replace(self, B_X=M, B_x=M)

    def ranks(self, spec):
        """Effective (r_c, r_QK, r_v) with None replaced by full rank."""
        return (self.r_c or min(spec.k, spec.d),
                self.r_QK or spec.d,
                self.r_v or min(spec.d, spec.k))

    def validate(self, spec: Optional[ArchSpec] = None,
                 result: Optional[ValidationResult] = None) -> ValidationResult:
        own = result is None
        result = result or ValidationResult()
        check_choice(result, 'budget.budget_mode', self.budget_mode, BUDGET_MODES)
        for name in ('B_v', 'B_c', 'B_QK', 'B_w', 'B_x', 'B_X', 'B'):
            check_positive(result, f'budget.{name}', getattr(self, name), allow_zero=True)
        for name in ('kappa', 'L_sigma'):
            check_positive(result, f'budget.{name}', getattr(self, name))
        if self.C1 is not None:
            check_positive(result, 'budget.C1', self.C1)
        if spec is not None:
            limits = {'r_v': min(spec.d, spec.k), 'r_c': min(spec.k, spec.d), 'r_QK': spec.d}
            for name, limit in limits.items():
                value = getattr(self, name)
                if value is not None and not (isinstance(value, int) and 1 <= value <= limit):
                    result.add_error(f'budget.{name}', f"rank cap must lie in [1, {limit}], got {value!r}",
                                     "Lower the rank cap to the matrix dimensions")
        if self.tail is not None:
            self.tail.validate(result)
        _finish(result, own, 'budget')
        return result

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != 'tail'}
        out['tail'] = self.tail.to_dict() if self.tail is not None else None
        return out

    @classmethod
    def from_dict(cls, raw, tail=None, spec=None, result: Optional[ValidationResult] = None):
        own = result is None
        result = result or ValidationResult()
        before = len(result.errors)
        names = [f.name for f in fields(cls)]
        raw = dict(check_keys(result, 'budget', raw, names))
        if isinstance(raw.get('tail'), dict):
            raw['tail'] = TailModel.from_dict(raw['tail'], result)
        if tail is not None:
            raw['tail'] = tail
        budget = cls(**raw) if len(result.errors) == before else cls()
        if len(result.errors) == before:
            budget.validate(spec, result)
        _finish(result, own, 'budget')
        return budget


@dataclass(frozen=True)
class TransformerParams:
    """Weights indexed [layer][head]; immutable once built (arrays are copied, never mutated)."""
    W_QK: List[List[np.ndarray]]
    W_v: List[List[np.ndarray]]
    W_c: List[List[np.ndarray]]
    w: np.ndarray

    MATRIX_NAMES = ('W_QK', 'W_v', 'W_c')

    def matrices(self):
        """Yield (name, layer, head, matrix) for every weight matrix."""
        for name in self.MATRIX_NAMES:
            for l, layer in enumerate(getattr(self, name)):
                for h, M in enumerate(layer):
                    yield name, l, h, M

    def map_matrices(self, fn):
        """New params with ``fn(name, matrix)`` applied to every weight matrix."""
        mapped = {name: [[fn(name, M) for M in layer] for layer in getattr(self, name)]
                  for name in self.MATRIX_NAMES}
        return TransformerParams(w=np.array(self.w, dtype=np.float64), **mapped)

    def check_shapes(self, spec: ArchSpec):
        expected = {'W_QK': (spec.d, spec.d), 'W_v': (spec.d, spec.k), 'W_c': (spec.k, spec.d)}
        for name in self.MATRIX_NAMES:
            layers = getattr(self, name)
            if len(layers) != spec.n_layers or any(len(heads) != spec.n_heads for heads in layers):
                raise InvalidParameterError(f"{name} must have {spec.n_layers} layer(s) of {spec.n_heads} head(s)")
        for name, l, h, M in self.matrices():
            if M.shape != expected[name]:
                raise InvalidParameterError(f"{name}[{l}][{h}] has shape {M.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(M)):
                raise InvalidParameterError(f"{name}[{l}][{h}] has non-finite entries")
        if self.w.shape != (spec.d,) or not np.all(np.isfinite(self.w)):
            raise InvalidParameterError(f"readout must be a finite vector of length {spec.d}")
        return self

    def flatten(self):
        parts = [M.ravel() for _, _, _, M in self.matrices()]
        parts.append(self.w.ravel())
        return np.concatenate(parts)

    def unflatten(self, vector):
        """Params with the same layout as ``self`` filled from ``vector``."""
        vector = np.asarray(vector, dtype=np.float64)
        offset = 0

        def take(M):
            nonlocal offset
            block = vector[offset:offset + M.size].reshape(M.shape)
            offset += M.size
            return block.copy()

        mapped = {name: [[take(M) for M in layer] for layer in getattr(self, name)]
                  for name in self.MATRIX_NAMES}
        w = take(self.w)
        return TransformerParams(w=w, **mapped)

    @classmethod
    def zeros(cls, spec: ArchSpec):
        def block(rows, cols):
            return [[np.zeros((rows, cols)) for _ in range(spec.n_heads)] for _ in range(spec.n_layers)]
        return cls(W_QK=block(spec.d, spec.d), W_v=block(spec.d, spec.k),
                   W_c=block(spec.k, spec.d), w=np.zeros(spec.d))

    def to_dict(self):
        out = {name: [[M.tolist() for M in layer] for layer in getattr(self, name)]
               for name in self.MATRIX_NAMES}
        out['w'] = self.w.tolist()
        return out

    @classmethod
    def from_dict(cls, raw):
        try:
            mapped = {name: [[np.array(M, dtype=np.float64) for M in layer] for layer in raw[name]]
                      for name in cls.MATRIX_NAMES}
            return cls(w=np.array(raw['w'], dtype=np.float64), **mapped)
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidParameterError(f"malformed parameter record: {e}")


@dataclass
class ConstraintCheck:
    name: str
    measured: float
    cap: float
    passed: bool

    def to_dict(self):
        return {'name': self.name, 'measured': self.measured, 'cap': self.cap, 'passed': self.passed}


@dataclass
class BudgetAudit:
    """Result of check_budget: one ConstraintCheck per constrained quantity."""
    checks: List[ConstraintCheck] = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def get(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        return {'passed': self.passed, 'checks': [c.to_dict() for c in self.checks]}
