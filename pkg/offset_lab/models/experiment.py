"""Experiment Models - configuration and results of the ERM laboratory.

Key Models:
    OptimizerSettings: projected gradient descent knobs
    DeltaGrid: discretization scales tried when minimising a bound over delta
    OffsetSettings: finite-class offset-complexity run
    ExperimentConfig: one (architecture, budget, data regime, loss) experiment grid
    CellResult: outcome of a single (n, seed) cell
    ExperimentResult: every cell plus per-n aggregates
    LabConfig: the whole JSON config file (arch, budget, tail, experiment, offset, delta_grid)

Config file layout:
    {
      "arch":       {"kind": "SH", "T": 4, "d": 2, "k": 2},
      "budget":     {"B_v": 1.0, "B_c": 1.0, ...},
      "tail":       {"regime": "subgaussian", "nu": 1.0, ...} | null,
      "experiment": {"data_regime": "bounded", "n_grid": [32, 128, 512], ...},
      "offset":     {"n": 10, "grid_size": 16, ...},
      "delta_grid": {"min": 1e-6, "max": 1.0, "points": 32} | {"fixed": 0.1}
    }

Desk scale:
    Experiments are limited to T <= 8, d <= 4, k <= 4, H <= 4, L <= 3 and
    n <= 2048 so that a full grid finishes in minutes on one machine.
"""

import json
import math
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional

import numpy as np

from ..utils.errors import ConfigError, LabIOError
from ..utils.validation import ValidationResult, check_choice, check_keys, check_positive
from .arch import ArchSpec, ParamBudget, TailModel
from .reports import BOUND_FAMILIES

DATA_REGIMES = ('bounded', 'subgaussian', 'heavytail')
LOSSES = ('squared', 'absolute', 'logistic')
MIN_TEST_SIZE = 10_000
DESK_LIMITS = {'T': 8, 'd': 4, 'k': 4, 'H': 4, 'L': 3}
MAX_SAMPLE_SIZE = 2048

# Families whose assumptions each data regime satisfies
REGIME_FAMILIES = {
    'bounded': ('offset-generic', 'norm', 'rank'),
    'subgaussian': ('subgaussian',),
    'heavytail': ('heavytail',),
}


def json_ready(value):
    """Copy of ``value`` with every non-finite float replaced by None, i.e. null in JSON."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_ready(v) for v in value]
    return value


@dataclass(frozen=True)
class OptimizerSettings:
    step_size: float = 0.05
    steps: int = 200
    restarts: int = 2
    search_draws: int = 10_000  # budget-respecting random draws screened before the polishing run; 0 skips it

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class DeltaGrid:
    min: float = 1e-6
    max: float = 1.0
    points: int = 32
    fixed: Optional[float] = None

    def values(self):
        if self.fixed is not None:
            return np.array([self.fixed], dtype=np.float64)
        return np.logspace(math.log10(self.min), math.log10(self.max), self.points)

    def to_dict(self):
        if self.fixed is not None:
            return {'fixed': self.fixed}
        return {'min': self.min, 'max': self.max, 'points': self.points}

    @classmethod
    def from_dict(cls, raw, result: ValidationResult):
        if raw is None:
            return cls()
        raw = check_keys(result, 'delta_grid', raw, ['min', 'max', 'points', 'fixed'])
        if 'fixed' in raw:
            if len(raw) > 1:
                result.add_error('delta_grid', "'fixed' cannot be combined with a grid",
                                 "Keep either 'fixed' or 'min'/'max'/'points'")
            check_positive(result, 'delta_grid.fixed', raw['fixed'])
            return cls(fixed=raw['fixed'])
        grid = cls(**{k: raw[k] for k in ('min', 'max', 'points') if k in raw})
        check_positive(result, 'delta_grid.min', grid.min)
        check_positive(result, 'delta_grid.max', grid.max)
        if not (isinstance(grid.points, int) and grid.points >= 1):
            result.add_error('delta_grid.points', "must be an integer >= 1", "Use e.g. 32")
        if isinstance(grid.min, (int, float)) and isinstance(grid.max, (int, float)) and grid.min > grid.max:
            result.add_error('delta_grid', "min exceeds max", "Swap min and max")
        return grid


@dataclass(frozen=True)
class OffsetSettings:
    n: int = 10
    grid_size: int = 16
    beta: Optional[float] = None
    n_draws: int = 100_000
    loss: str = 'squared'
    include_teacher: bool = True

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw, result: ValidationResult):
        if raw is None:
            return cls()
        names = [f.name for f in fields(cls)]
        raw = check_keys(result, 'offset', raw, names)
        settings = cls(**{k: v for k, v in raw.items() if k in names})
        for name in ('n', 'grid_size'):
            value = getattr(settings, name)
            if not (isinstance(value, int) and value >= 1):
                result.add_error(f'offset.{name}', "must be an integer >= 1", "Use a positive count")
        if not (isinstance(settings.n_draws, int) and settings.n_draws >= 100):
            result.add_error('offset.n_draws', "Monte Carlo needs at least 100 draws", "Use n_draws >= 100")
        if settings.beta is not None:
            check_positive(result, 'offset.beta', settings.beta)
        check_choice(result, 'offset.loss', settings.loss, LOSSES)
        return settings


@dataclass(frozen=True)
class ExperimentConfig:
    spec: ArchSpec
    budget: ParamBudget
    data_regime: str = 'bounded'
    loss: str = 'squared'
    noise_sd: float = 0.1
    n_grid: tuple = (32, 128, 512)
    n_test: int = MIN_TEST_SIZE
    seeds: tuple = (0,)
    optimizer: OptimizerSettings = OptimizerSettings()
    bound_families: tuple = ('offset-generic', 'norm', 'rank')
    truncation: Optional[Any] = None  # None, 'auto' or a positive threshold M
    delta_grid: DeltaGrid = DeltaGrid()

    SECTION_KEYS = ('data_regime', 'loss', 'noise_sd', 'n_grid', 'n_test', 'seeds',
                    'optimizer', 'bound_families', 'truncation')

    @property
    def tail(self) -> Optional[TailModel]:
        return self.budget.tail

    def validate(self, result: Optional[ValidationResult] = None) -> ValidationResult:
        own = result is None
        result = result or ValidationResult()
        check_choice(result, 'experiment.data_regime', self.data_regime, DATA_REGIMES)
        check_choice(result, 'experiment.loss', self.loss, LOSSES)
        check_positive(result, 'experiment.noise_sd', self.noise_sd, allow_zero=True)

        grid = list(self.n_grid)
        if not grid:
            result.add_error('experiment.n_grid', "must not be empty", "List at least one sample size")
        elif any(not isinstance(n, int) or n < 1 for n in grid) or grid != sorted(set(grid)):
            result.add_error('experiment.n_grid', "must be strictly ascending positive integers",
                             "Sort the sample sizes and drop duplicates")
        elif grid[-1] > MAX_SAMPLE_SIZE:
            result.add_error('experiment.n_grid', f"sample sizes above {MAX_SAMPLE_SIZE} exceed desk scale",
                             f"Keep n <= {MAX_SAMPLE_SIZE}")
        if not isinstance(self.n_test, int) or self.n_test < MIN_TEST_SIZE:
            result.add_error('experiment.n_test', f"must be at least {MIN_TEST_SIZE}", f"Use n_test >= {MIN_TEST_SIZE}")
        if not self.seeds or any(not isinstance(s, int) or s < 0 for s in self.seeds):
            result.add_error('experiment.seeds', "must be a non-empty list of nonnegative integers", "e.g. [0, 1]")

        opt = self.optimizer
        check_positive(result, 'experiment.optimizer.step_size', opt.step_size)
        if not (isinstance(opt.steps, int) and opt.steps >= 1):
            result.add_error('experiment.optimizer.steps', "must be an integer >= 1", "Use e.g. 200")
        if not (isinstance(opt.restarts, int) and opt.restarts >= 1):
            result.add_error('experiment.optimizer.restarts', "must be an integer >= 1", "Use e.g. 2")
        if not (isinstance(opt.search_draws, int) and opt.search_draws >= 0):
            result.add_error('experiment.optimizer.search_draws', "must be an integer >= 0", "Use e.g. 10000")

        for name, limit in DESK_LIMITS.items():
            if getattr(self.spec, name) > limit:
                result.add_error(f'arch.{name}', f"exceeds the desk-scale limit {limit}", f"Use {name} <= {limit}")

        allowed = REGIME_FAMILIES.get(self.data_regime, ())
        if not self.bound_families:
            result.add_error('experiment.bound_families', "must not be empty", f"Use a subset of {allowed}")
        for family in self.bound_families:
            if family not in BOUND_FAMILIES:
                result.add_error('experiment.bound_families', f"unknown family {family!r}",
                                 f"Use one of: {', '.join(BOUND_FAMILIES)}")
            elif family not in allowed:
                result.add_error('experiment.bound_families',
                                 f"family {family!r} does not apply to the {self.data_regime} regime",
                                 f"Use a subset of: {', '.join(allowed)}")

        if self.data_regime in ('subgaussian', 'heavytail'):
            if self.tail is None or self.tail.regime != self.data_regime:
                result.add_error('tail', f"the {self.data_regime} regime needs a matching tail section",
                                 f"Add a tail section with regime '{self.data_regime}'")
            elif (self.tail.T, self.tail.d) != (self.spec.T, self.spec.d):
                result.add_error('tail', "tail shape (T, d) differs from the architecture",
                                 "Copy T and d from the arch section")
        if self.truncation is not None and self.truncation != 'auto':
            check_positive(result, 'experiment.truncation', self.truncation)
        if self.budget.budget_mode == 'rank' or 'rank' in self.bound_families or 'heavytail' in self.bound_families:
            for name in ('B_v', 'B_c', 'B_QK', 'B_w'):
                if getattr(self.budget, name) <= 0:
                    result.add_error(f'budget.{name}', "rank-based bounds need positive weight caps",
                                     "Set a positive cap")
        if own:
            result.raise_if_invalid('experiment')
        return result

    def to_dict(self):
        return {
            'arch': self.spec.to_dict(),
            'budget': self.budget.to_dict(),
            'experiment': {
                'data_regime': self.data_regime,
                'loss': self.loss,
                'noise_sd': self.noise_sd,
                'n_grid': list(self.n_grid),
                'n_test': self.n_test,
                'seeds': list(self.seeds),
                'optimizer': self.optimizer.to_dict(),
                'bound_families': list(self.bound_families),
                'truncation': self.truncation,
            },
            'delta_grid': self.delta_grid.to_dict(),
        }

    @classmethod
    def from_section(cls, raw, spec, budget, delta_grid, result: ValidationResult):
        raw = check_keys(result, 'experiment', raw if raw is not None else {}, cls.SECTION_KEYS)
        raw = {k: v for k, v in raw.items() if k in cls.SECTION_KEYS}
        opt_names = [f.name for f in fields(OptimizerSettings)]
        opt_raw = check_keys(result, 'experiment.optimizer', raw.pop('optimizer', {}), opt_names)
        opt_raw = {k: v for k, v in opt_raw.items() if k in opt_names}
        for key in ('n_grid', 'seeds', 'bound_families'):
            if key in raw and isinstance(raw[key], list):
                raw[key] = tuple(raw[key])
        config = cls(spec=spec, budget=budget, optimizer=OptimizerSettings(**opt_raw),
                     delta_grid=delta_grid, **raw)
        config.validate(result)
        return config


@dataclass
class CellResult:
    n: int
    seed: int
    empirical_mean: float = math.nan
    empirical_se: float = math.nan
    optimizer_final_risk: float = math.nan
    teacher_risk: float = math.nan
    optimizer_gap: float = 0.0
    truncation_rate: float = 0.0
    kappa: float = math.nan
    bounds: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    ratios: Dict[str, float] = field(default_factory=dict)
    dominates: Dict[str, bool] = field(default_factory=dict)
    failed: bool = False
    error: Optional[Dict[str, Any]] = None

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw):
        # non-finite numbers are stored as null
        raw = dict(raw)
        for f in fields(cls):
            if f.type is float and raw.get(f.name, 0.0) is None:
                raw[f.name] = math.nan
        raw['ratios'] = {k: math.nan if v is None else v for k, v in raw.get('ratios', {}).items()}
        return cls(**raw)


@dataclass
class ExperimentResult:
    config: Dict[str, Any]
    cells: List[CellResult] = field(default_factory=list)
    medians: Dict[str, float] = field(default_factory=dict)
    median_inversions: int = 0

    @property
    def failed_cells(self):
        return [c for c in self.cells if c.failed]

    def to_dict(self):
        return {
            'config': self.config,
            'cells': [c.to_dict() for c in self.cells],
            'medians': self.medians,
            'median_inversions': self.median_inversions,
        }

    def to_json(self):
        return json.dumps(json_ready(self.to_dict()), indent=2, sort_keys=True, allow_nan=False)

    @classmethod
    def from_dict(cls, raw):
        return cls(config=raw['config'], cells=[CellResult.from_dict(c) for c in raw['cells']],
                   medians=raw['medians'], median_inversions=raw['median_inversions'])

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except OSError as e:
            raise LabIOError(f"cannot read result file {path}: {e}")
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"{path} is not an experiment result: {e}")


@dataclass(frozen=True)
class LabConfig:
    """The whole config file, shared by every CLI subcommand."""
    spec: ArchSpec
    budget: ParamBudget
    experiment: ExperimentConfig
    offset: OffsetSettings
    delta_grid: DeltaGrid
    raw: Dict[str, Any] = field(default_factory=dict, compare=False)

    TOP_LEVEL_KEYS = ('arch', 'budget', 'tail', 'experiment', 'offset', 'delta_grid')

    @classmethod
    def from_dict(cls, raw):
        result = ValidationResult()
        raw = check_keys(result, 'config', raw, cls.TOP_LEVEL_KEYS, required=['arch', 'budget'])
        result.raise_if_invalid('config')

        spec = ArchSpec.from_dict(raw['arch'], result)
        tail = TailModel.from_dict(raw['tail'], result) if raw.get('tail') is not None else None
        budget = ParamBudget.from_dict(raw['budget'], tail=tail, spec=spec, result=result)
        delta_grid = DeltaGrid.from_dict(raw.get('delta_grid'), result)
        offset = OffsetSettings.from_dict(raw.get('offset'), result)
        result.raise_if_invalid('config')

        experiment = ExperimentConfig.from_section(raw.get('experiment'), spec, budget, delta_grid, result)
        result.raise_if_invalid('config')
        return cls(spec=spec, budget=budget, experiment=experiment, offset=offset,
                   delta_grid=delta_grid, raw=raw)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}")
        return cls.from_dict(raw)
