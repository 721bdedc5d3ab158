"""
Desk-scale ERM experiments.

Every (n, seed) cell owns the stream RngStream(seed, stream_id=n) and splits it:

    child(0)  teacher, inputs and labels      (generate_dataset)
    child(1)  optimizer restarts              (train_erm, restart i uses child(1).child(i),
                                               the random search child(1).child(SEARCH_STREAM))
    child(2)  fresh test sample               (estimate_excess_risk)

so a cell's numbers never depend on which process ran it or in what order.

Data regimes:
    bounded      X uniform on the Frobenius ball of radius B_X
    subgaussian  Gaussian entries with variance nu^2 / max(T, d)
    heavytail    symmetric Pareto entries (beta, x_min); losses go through the robust transform

In the unbounded regimes the learner sees T_M(X) (Frobenius truncation at M) while
the teacher labels the raw X; M defaults to optimal_threshold(tail, n).
"""

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List

import numpy as np
import pandas as pd
from scipy import special

from ...models.arch import TransformerParams
from ...models.experiment import MIN_TEST_SIZE, CellResult, ExperimentResult
from ...utils.errors import ConfigError, InvalidParameterError, LabError, LabIOError, OptimizerFailureError, require
from ...utils.matrix_kit import Distribution, RngStream, sample_matrices, spectral_norm
from ..bounds.bounds import best_bound, finite_class_offset_bound
from ..offset_mc.offset_mc import (MAX_EXACT_N, MC_CHUNK, build_class_sample, excess_loss,
                                   offset_complexity_exact, offset_complexity_mc)
from ..tails.tails import (NU_SCALE_NOTE, heavy_tail_probability, heavy_tail_term, optimal_threshold,
                           robust_loss, second_moment_proxy, subgaussian_tail_probability,
                           subgaussian_tail_term, truncate_inputs)
from ..transformer.transformer import output_bound, predict, project_params, sample_params

logger = logging.getLogger(__name__)

CSV_COLUMNS = ['n', 'seed', 'family', 'empirical', 'se', 'bound', 'ratio', 'truncation_rate', 'optimizer_gap']
FD_STEP = 1e-5
ARMIJO = 1e-4
MIN_STEP = 1e-12
MAX_STEP_GROWTH = 16
SEARCH_STREAM = 2 ** 20  # restart streams use keys below this
DOMINATION_SE = 4.0
UNBOUNDED_REGIMES = ('subgaussian', 'heavytail')


@dataclass
class Dataset:
    X: np.ndarray          # (n, T, d) inputs as the learner sees them
    y: np.ndarray
    teacher: TransformerParams
    f_star: np.ndarray     # teacher predictions on the raw inputs

    @property
    def n(self):
        return len(self.y)


@dataclass
class ErmFit:
    params: TransformerParams
    empirical_risk: float
    restart_risks: List[float] = field(default_factory=list)
    search_risk: float = math.nan


def regime_distribution(config) -> Distribution:
    """Input law of the configured data regime."""
    if config.data_regime == 'bounded':
        return Distribution.uniform_ball(config.budget.B_X)
    tail = config.tail
    if tail is None or tail.regime != config.data_regime:
        raise InvalidParameterError(f"the {config.data_regime} regime needs a matching tail model")
    if config.data_regime == 'subgaussian':
        return Distribution.gaussian(tail.nu / math.sqrt(max(config.spec.T, config.spec.d)))
    return Distribution.pareto(tail.beta, tail.x_min)


def robust_alpha(config):
    """Scale of the robust loss transform, or None when the plain loss is used."""
    return config.tail.alpha if config.data_regime == 'heavytail' else None


def truncation_threshold(config, n):
    """Truncation radius M for a sample of size ``n``; None means raw inputs."""
    if config.truncation not in (None, 'auto'):
        return float(config.truncation)
    if config.data_regime not in UNBOUNDED_REGIMES:
        return None
    return optimal_threshold(config.tail, n)


def _input_capped(config, M):
    if M is not None and config.data_regime in UNBOUNDED_REGIMES:
        return config.budget.with_input_cap(M)
    return config.budget


def lipschitz_constant(config, M=None) -> float:
    """kappa of the configured loss: 2 (B + output bound) for squared loss, 1 otherwise."""
    if config.loss != 'squared':
        return 1.0
    cap = output_bound(config.spec, _input_capped(config, M))
    return 2 * (max(config.budget.B, cap) + cap)


def evaluation_budget(config, M=None):
    """Budget the bounds are evaluated with: computed kappa, B at least the class output bound."""
    budget = _input_capped(config, M)
    cap = output_bound(config.spec, budget)
    return replace(budget, kappa=lipschitz_constant(config, M), B=max(config.budget.B, cap))


def pointwise_loss(loss, y, f, alpha=None):
    if loss == 'squared':
        base = (y - f) ** 2
    elif loss == 'absolute':
        base = np.abs(y - f)
    else:
        base = np.logaddexp(0.0, -y * f)
    return base if alpha is None else robust_loss(base, alpha)


def generate_dataset(config, n, rng, teacher=None) -> Dataset:
    """Teacher (sampled into the budget unless given), inputs of the regime and labels."""
    require(isinstance(n, (int, np.integer)) and n >= 1, "sample size must be at least 1", n=n)
    spec = config.spec
    dist = regime_distribution(config)
    if teacher is None:
        teacher = sample_params(spec, config.budget, rng.child(0))
    X = sample_matrices(dist, int(n), spec.T, spec.d, rng.child(1))
    f_star = predict(teacher, X, spec)
    gen = rng.child(2).generator()
    if config.loss == 'logistic':
        y = np.where(gen.random(int(n)) < special.expit(f_star), 1.0, -1.0)
    else:
        y = f_star + config.noise_sd * gen.standard_normal(int(n))
    return Dataset(X=X, y=y, teacher=teacher, f_star=f_star)


def empirical_risk(params, config, dataset) -> float:
    f = predict(params, dataset.X, config.spec)
    return float(np.mean(pointwise_loss(config.loss, dataset.y, f, robust_alpha(config))))


def _gradient(objective, vec, h=FD_STEP):
    grad = np.empty_like(vec)
    for i in range(vec.size):
        step = np.zeros_like(vec)
        step[i] = h
        grad[i] = (objective(vec + step) - objective(vec - step)) / (2 * h)
    return grad


def _descend(objective, project, vec, opt, label):
    """Projected gradient descent with Armijo backtracking; returns the best iterate and its risk.

    The trial step halves until the sufficient-decrease test passes and doubles
    (up to MAX_STEP_GROWTH * step_size) after each accepted step.
    """
    risk = objective(vec)
    best_vec, best_risk = vec, risk
    step = opt.step_size
    for it in range(opt.steps):
        grad = _gradient(objective, vec)
        if not np.all(np.isfinite(grad)):
            raise OptimizerFailureError("gradient is not finite",
                                        {'restart': label, 'step': it, 'step_size': step})
        while True:
            trial = project(vec - step * grad)
            trial_risk = objective(trial)
            if not math.isfinite(trial_risk):
                raise OptimizerFailureError("empirical risk diverged",
                                            {'restart': label, 'step': it, 'risk': trial_risk, 'step_size': step})
            if step <= MIN_STEP or trial_risk <= risk + ARMIJO * float(grad @ (trial - vec)):
                break
            step *= 0.5
        vec, risk = trial, trial_risk
        if risk < best_risk:
            best_vec, best_risk = vec, risk
        if step <= MIN_STEP:
            break
        step = min(2 * step, MAX_STEP_GROWTH * opt.step_size)
    return best_vec, best_risk


def random_search(config, dataset, rng, draws):
    """Lowest-risk of ``draws`` budget-respecting parameter draws; draw i comes from ``rng.child(i)``."""
    best_params, best_risk = None, math.inf
    for i in range(draws):
        params = sample_params(config.spec, config.budget, rng.child(i))
        risk = empirical_risk(params, config, dataset)
        if risk < best_risk:
            best_params, best_risk = params, risk
    return best_params, best_risk


def train_erm(config, dataset, rng, init=None) -> ErmFit:
    """Projected gradient descent with central-difference gradients, best of the restarts.

    Restart 0 starts from ``init`` when given; every other restart starts from a
    random budget-respecting draw of ``rng.child(restart)``. With ``search_draws``
    set, one more run starts from the best random draw of ``rng.child(SEARCH_STREAM)``,
    so the fit is never worse than that search.
    """
    require(dataset.n >= 1, "dataset must not be empty")
    spec, budget, opt = config.spec, config.budget, config.optimizer
    template = TransformerParams.zeros(spec)

    def objective(vec):
        return empirical_risk(template.unflatten(vec), config, dataset)

    def project(vec):
        return project_params(template.unflatten(vec), budget, spec).flatten()

    best, risks = None, []
    for restart in range(opt.restarts):
        start = init if (init is not None and restart == 0) else sample_params(spec, budget, rng.child(restart))
        run_vec, run_risk = _descend(objective, project, project(start.flatten()), opt, restart)
        risks.append(run_risk)
        logger.debug("restart %d: best empirical risk %.6g", restart, run_risk)
        if best is None or run_risk < best[1]:
            best = (run_vec, run_risk)

    search_risk = math.nan
    if opt.search_draws > 0:
        seed_params, search_risk = random_search(config, dataset, rng.child(SEARCH_STREAM), opt.search_draws)
        if seed_params is not None:
            run_vec, run_risk = _descend(objective, project, seed_params.flatten(), opt, 'search')
            logger.debug("search start %.6g polished to %.6g", search_risk, run_risk)
            if run_risk < best[1]:
                best = (run_vec, run_risk)
    return ErmFit(params=template.unflatten(best[0]), empirical_risk=best[1], restart_risks=risks,
                  search_risk=search_risk)


def estimate_excess_risk(fitted, teacher, config, n_test, rng, M=None) -> dict:
    """Monte Carlo mean and standard error of the conditional excess loss on a fresh sample."""
    require(n_test >= MIN_TEST_SIZE, f"n_test must be at least {MIN_TEST_SIZE}", n_test=n_test)
    spec = config.spec
    X = sample_matrices(regime_distribution(config), int(n_test), spec.T, spec.d, rng)
    f_star = predict(teacher, X, spec)
    X_fit = truncate_inputs(X, M)[0] if M is not None else X
    g = excess_loss(config.loss, predict(fitted, X_fit, spec), f_star, config.noise_sd, robust_alpha(config))
    return {'mean': float(np.mean(g)), 'std_error': float(np.std(g, ddof=1) / math.sqrt(n_test))}


def run_cell(config, n, seed) -> CellResult:
    cell = CellResult(n=n, seed=seed)
    stream = RngStream(seed, stream_id=n)
    try:
        M = truncation_threshold(config, n)
        dataset = generate_dataset(config, n, stream.child(0))
        train_set = dataset
        if M is not None:
            X_fit, moved = truncate_inputs(dataset.X, M)
            train_set = replace(dataset, X=X_fit)
            cell.truncation_rate = float(moved.mean())

        fit = train_erm(config, train_set, stream.child(1))
        cell.optimizer_final_risk = fit.empirical_risk
        cell.teacher_risk = empirical_risk(dataset.teacher, config, train_set)
        cell.optimizer_gap = max(0.0, fit.empirical_risk - cell.teacher_risk)

        estimate = estimate_excess_risk(fit.params, dataset.teacher, config, config.n_test, stream.child(2), M)
        cell.empirical_mean, cell.empirical_se = estimate['mean'], estimate['std_error']

        budget = evaluation_budget(config, M)
        cell.kappa = budget.kappa
        grid = config.delta_grid.values()
        for family in config.bound_families:
            report = best_bound(family, config.spec, budget, n, grid, 0.0, M)
            total = report.total
            cell.bounds[family] = report.to_dict()
            cell.ratios[family] = total / cell.empirical_mean if cell.empirical_mean > 0 else math.inf
            cell.dominates[family] = bool(
                total >= cell.empirical_mean - DOMINATION_SE * cell.empirical_se - cell.optimizer_gap)
        logger.info("cell n=%d seed=%d: excess risk %.4g (se %.2g), bound/empirical %s", n, seed,
                    cell.empirical_mean, cell.empirical_se,
                    ', '.join(f'{family}={ratio:.4g}' for family, ratio in cell.ratios.items()))
    except LabError as e:
        logger.warning("cell n=%d seed=%d failed: %s", n, seed, e)
        cell.failed = True
        cell.error = e.to_dict()
    return cell


def _run_cell_task(task):
    return run_cell(*task)


def _median_summary(cells, n_grid):
    medians = {}
    for n in n_grid:
        values = [c.empirical_mean for c in cells if c.n == n and not c.failed]
        if values:
            medians[str(n)] = float(np.median(values))
    sequence = [medians[str(n)] for n in n_grid if str(n) in medians]
    inversions = sum(1 for a, b in zip(sequence, sequence[1:]) if b > a)
    return medians, inversions


def run_experiment(config, workers=1) -> ExperimentResult:
    config.validate()
    tasks = [(config, n, seed) for n in config.n_grid for seed in config.seeds]
    logger.info("running %d cells (%s regime, %s loss, %s) on %d worker(s)", len(tasks),
                config.data_regime, config.loss, config.spec.kind, workers)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_run_cell_task, tasks))
    else:
        cells = [run_cell(*task) for task in tasks]

    medians, inversions = _median_summary(cells, config.n_grid)
    if inversions > 1:
        logger.warning("per-n medians rise %d times across n_grid", inversions)
    failed = [c for c in cells if c.failed]
    if failed:
        logger.warning("%d of %d cells failed", len(failed), len(cells))
    return ExperimentResult(config=config.to_dict(), cells=cells, medians=medians, median_inversions=inversions)


def result_frame(result: ExperimentResult) -> pd.DataFrame:
    """One row per (n, seed, bound family) in the fixed CSV column order."""
    families = result.config['experiment']['bound_families']
    rows = []
    for cell in result.cells:
        for family in families:
            bound = cell.bounds.get(family, {}).get('total', math.nan)
            rows.append({
                'n': cell.n,
                'seed': cell.seed,
                'family': family,
                'empirical': cell.empirical_mean,
                'se': cell.empirical_se,
                'bound': bound,
                'ratio': cell.ratios.get(family, math.nan),
                'truncation_rate': cell.truncation_rate,
                'optimizer_gap': cell.optimizer_gap,
            })
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def write_result(result: ExperimentResult, path):
    """Write ``<stem>.json`` (full result) and ``<stem>.csv``; returns both paths."""
    stem, ext = os.path.splitext(path)
    json_path = path if ext == '.json' else stem + '.json'
    csv_path = stem + '.csv'
    try:
        with open(json_path, 'w') as fh:
            fh.write(result.to_json())
            fh.write('\n')
        result_frame(result).to_csv(csv_path, index=False, float_format='%.17g')
    except OSError as e:
        raise LabIOError(f"cannot write result files next to {path}: {e}")
    logger.info("wrote %s and %s", json_path, csv_path)
    return json_path, csv_path


def render_table(result: ExperimentResult) -> str:
    """Human-readable summary, 6 significant digits."""
    frame = result_frame(result)
    lines = [frame.to_string(index=False, float_format=lambda v: f'{v:.6g}')]
    lines.append('')
    lines.append('median empirical excess risk per n:')
    for n, value in result.medians.items():
        lines.append(f'  n={n}: {value:.6g}')
    lines.append(f'median inversions: {result.median_inversions}')
    if result.failed_cells:
        lines.append(f'failed cells: {len(result.failed_cells)}')
    return '\n'.join(lines)


def run_offset_study(lab, seed=0, workers=1, chunk=MC_CHUNK) -> dict:
    """Exact and Monte Carlo offset complexity of a random finite class on one sample."""
    config, settings = lab.experiment, lab.offset
    stream = RngStream(seed, stream_id=0)
    dataset = generate_dataset(config, settings.n, stream.child(0))
    M = truncation_threshold(config, settings.n)
    X = truncate_inputs(dataset.X, M)[0] if M is not None else dataset.X
    fc = build_class_sample(config.spec, config.budget, settings.loss, dataset.teacher, X, settings.grid_size,
                            stream.child(1), noise_sd=config.noise_sd, include_teacher=settings.include_teacher,
                            alpha=robust_alpha(config))
    beta = settings.beta
    if beta is None:
        beta = 1.0 / (2 * fc.value_cap) if fc.value_cap > 0 else 1.0
    exact = offset_complexity_exact(fc, beta) if fc.n <= MAX_EXACT_N else None
    mc = offset_complexity_mc(fc, beta, settings.n_draws, stream.child(2), chunk=chunk, workers=workers)
    return {
        'n': fc.n,
        'n_functions': fc.n_functions,
        'value_cap': fc.value_cap,
        'beta': beta,
        'exact': exact.to_dict() if exact is not None else None,
        'monte_carlo': mc.to_dict(),
        'finite_class_bound': finite_class_offset_bound(fc.n_functions, fc.n, beta),
    }


def run_tail_study(lab, seed=0) -> dict:
    """Thresholds, tail terms and empirical truncation rates for each n of the grid."""
    config = lab.experiment
    tail = config.tail
    if tail is None:
        raise ConfigError("the tail study needs a 'tail' section")
    spec = config.spec
    dist = regime_distribution(replace(config, data_regime=tail.regime))
    rows = []
    for n in config.n_grid:
        M = optimal_threshold(tail, n)
        kappa = lipschitz_constant(config, M)
        X = sample_matrices(dist, config.n_test, spec.T, spec.d, RngStream(seed, stream_id=n))
        _, moved = truncate_inputs(X, M)
        if tail.regime == 'subgaussian':
            term = subgaussian_tail_term(kappa, tail, M)
            probability = subgaussian_tail_probability(tail, M)
            exceed = moved
        else:
            term = heavy_tail_term(tail, kappa, M)
            probability = heavy_tail_probability(tail, M)
            exceed = np.array([spectral_norm(X_i) > M for X_i in X])
        rows.append({
            'n': n,
            'threshold': M,
            'kappa': kappa,
            'tail_term': term,
            'tail_probability_bound': probability,
            'truncation_rate': float(moved.mean()),
            'exceedance_rate': float(exceed.mean()),
            'exceedance_se': float(np.std(exceed.astype(float), ddof=1) / math.sqrt(len(exceed))),
        })
    out = {'regime': tail.regime, 'rows': rows}
    if tail.regime == 'subgaussian':
        out['second_moment_proxy'] = second_moment_proxy(list(X))
        out['note'] = NU_SCALE_NOTE
    return out
