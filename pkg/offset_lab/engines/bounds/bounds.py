"""
Closed-form excess-risk bounds.

Every family reduces to the same skeleton

    total = (2 * penalty / n) * (1 + log N) + 8 * kappa * delta + truncation + approximation

and differs only in how the log covering number log N at scale delta is obtained:

    offset-generic  per-component l1,1 linear covers, delta split optimally across components
    norm            log(Gamma^3 / delta^2) with Gamma = gamma_SH | gamma_MH | gamma_ML + eta_ML
    rank            sum_i r_i C_i log(b_i^2 / delta^2) from the closed-form rank allocation
    subgaussian     norm family with B_X, B_x -> M, plus the sub-Gaussian truncation term
    heavytail       rank family with B_X -> M and kappa -> kappa * B_psi, plus the heavy-tail term

Component weights (how an error of size eps_j in one parameter block moves the output):

    SH   c: B_w L_s       QK: 2 B_w L_s B_c B_v    v: B_w L_s B_c     w: B_c
    MH   the SH weights times H
    ML   w: 1
         c(i):  alpha_i B_w
         v(i):  alpha_i B_w L_s B_v
         QK(i): alpha_i 2 L_s B_c B_v B_w
         with alpha_i = c^{L-i+1},  c = L_s B_c B_v (1 + 4 B_QK)
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np

from ...models.arch import ArchSpec, ParamBudget
from ...models.reports import AllocationResult, BoundReport
from ...utils.errors import InvalidParameterError, require
from ..tails.tails import heavy_tail_term, optimal_threshold, subgaussian_tail_term

logger = logging.getLogger(__name__)

RANK_COVER_CONSTANT = 0.5  # C_j: the r/2 prefactor of the rank covering bound
CONSISTENCY_RTOL = 1e-9


@dataclass(frozen=True)
class Component:
    """One parameter block of the peeling decomposition."""
    name: str
    weight: float
    cap: float
    rows: int
    cols: int
    rank: int


def _echo(spec, budget):
    return {'arch': spec.to_dict(), 'budget': budget.to_dict()}


def penalty_constant(spec: ArchSpec, budget: ParamBudget) -> float:
    """Offset penalty scale M shared by every bound family."""
    kappa = budget.kappa
    if spec.kind == 'ML':
        return 2 * kappa * (budget.B + budget.B_w)
    head = budget.B_w * budget.B_c * budget.B_v * budget.L_sigma * budget.B_X
    return 2 * kappa * budget.B + 2 * kappa * spec.n_heads * head


def excess_risk_from_log_cover(penalty, n, log_cover, kappa, delta, approx=0.0,
                               family='offset-generic', arch_kind='', inputs_echo=None) -> BoundReport:
    require(isinstance(n, (int, np.integer)) and n >= 1, "sample size must be at least 1", n=n)
    require(delta >= 0, "delta must be nonnegative", delta=delta)
    require(log_cover >= 0, "log covering number must be nonnegative", log_cover=log_cover)
    require(approx >= 0, "approximation term must be nonnegative", approx=approx)
    return BoundReport(
        family=family,
        arch_kind=arch_kind,
        n=int(n),
        delta=float(delta),
        penalty_constant=float(penalty),
        complexity_term=2 * penalty / n * (1 + log_cover),
        discretization_term=8 * kappa * delta,
        approximation_term=float(approx),
        log_cover=float(log_cover),
        inputs_echo=inputs_echo or {},
    )


def log_cover_l11_linear(B_x, B_W, eps, d, k) -> float:
    """(B_x^2 B_W^2 / eps^2) log(2dk + 1)."""
    require(eps > 0, "covering scale must be positive", eps=eps)
    return B_x ** 2 * B_W ** 2 / eps ** 2 * math.log(2 * d * k + 1)


def log_cover_rank_linear(B_x, B_W, eps, r) -> float:
    """(r/2) log(4 B_x^2 B_W^2 r / eps^2), floored at 0."""
    require(eps > 0, "covering scale must be positive", eps=eps)
    require(r >= 1, "rank must be at least 1", r=r)
    inner = 4 * B_x ** 2 * B_W ** 2 * r / eps ** 2
    if inner <= 0:
        return 0.0
    return max(0.0, r / 2 * math.log(inner))


def linear_cover_constant(spec: ArchSpec, budget: ParamBudget) -> float:
    """C1 of the linear covering bound: the budget override, else log(2 d max(d, k) + 1)."""
    if budget.C1 is not None:
        return budget.C1
    return math.log(2 * spec.d * max(spec.d, spec.k) + 1)


def alpha_products(budget: ParamBudget, L: int) -> List[float]:
    require(L >= 1, "need at least one layer", L=L)
    c = budget.L_sigma * budget.B_c * budget.B_v * (1 + 4 * budget.B_QK)
    return [c ** (L - i + 1) for i in range(1, L + 1)]


def _p23(x):
    return x ** (2.0 / 3.0)


def norm_complexity_terms(budget: ParamBudget, spec: ArchSpec) -> dict:
    """gamma_SH | gamma_MH | (gamma_ML, eta_ML, tau_2..tau_L) and the combined Gamma."""
    C1 = linear_cover_constant(spec, budget)
    c13 = C1 ** (1.0 / 3.0)
    bx = _p23(budget.B_x)
    L_s, B_w, B_c, B_v = budget.L_sigma, budget.B_w, budget.B_c, budget.B_v

    if spec.kind == 'SH':
        gamma = (c13 * bx * (_p23(B_w * L_s) + _p23(B_w * L_s * B_c * B_v))
                 + c13 * bx * (_p23(B_w * L_s * B_c * B_v) + 1))
        return {'gamma_SH': gamma, 'Gamma': gamma}

    if spec.kind == 'MH':
        H = spec.H
        gamma = (c13 * bx * (_p23(H * B_w * L_s) + 2 * _p23(H * B_w * L_s * B_c * B_v))
                 + c13 * bx * _p23(H))
        return {'gamma_MH': gamma, 'Gamma': gamma}

    alphas = alpha_products(budget, spec.L)
    taus = [_p23(a) + _p23(2 * a * L_s * B_c * B_v) + _p23(a * L_s * B_v) for a in alphas[1:]]
    a1 = alphas[0]
    gamma = (c13 * _p23(2 * L_s * B_c * B_v * a1 * B_w * budget.B_x ** 2)
             + c13 * bx * (1 + _p23(a1 * B_w) + _p23(a1 * B_w * L_s * B_v)))
    eta = c13 * _p23(B_w) * sum(taus)
    return {'gamma_ML': gamma, 'eta_ML': eta, 'tau': taus, 'Gamma': gamma + eta}


def norm_bound(spec: ArchSpec, budget: ParamBudget, n, delta, approx=0.0) -> BoundReport:
    require(delta > 0, "delta must be positive for the norm bound", delta=delta)
    Gamma = norm_complexity_terms(budget, spec)['Gamma']
    log_cover = max(0.0, math.log(Gamma ** 3 / delta ** 2)) if Gamma > 0 else 0.0
    return excess_risk_from_log_cover(penalty_constant(spec, budget), n, log_cover, budget.kappa, delta,
                                      approx, family='norm', arch_kind=spec.kind,
                                      inputs_echo=_echo(spec, budget))


def component_weights(spec: ArchSpec, budget: ParamBudget) -> List[Component]:
    """Parameter blocks with their peeling weights, caps, shapes and rank caps."""
    L_s, B_w, B_c, B_v = budget.L_sigma, budget.B_w, budget.B_c, budget.B_v
    r_c, r_QK, r_v = budget.ranks(spec)
    d, k = spec.d, spec.k

    if spec.kind in ('SH', 'MH'):
        H = spec.n_heads if spec.kind == 'MH' else 1
        return [
            Component('c', H * B_w * L_s, B_c, k, d, r_c),
            Component('QK', H * 2 * B_w * L_s * B_c * B_v, budget.B_QK, d, d, r_QK),
            Component('v', H * B_w * L_s * B_c, B_v, d, k, r_v),
            Component('w', H * B_c, B_w, d, 1, 1),
        ]

    alphas = alpha_products(budget, spec.L)
    layers = range(1, spec.L + 1)
    return ([Component('w', 1.0, B_w, d, 1, 1)]
            + [Component(f'c{i}', alphas[i - 1] * B_w, B_c, k, d, r_c) for i in layers]
            + [Component(f'v{i}', alphas[i - 1] * B_w * L_s * B_v, B_v, d, k, r_v) for i in layers]
            + [Component(f'QK{i}', alphas[i - 1] * 2 * L_s * B_c * B_v * B_w, budget.B_QK, d, d, r_QK)
               for i in layers])


def rank_allocation(r: Sequence[float], C: Sequence[float], beta: Sequence[float], eps, B_X) -> AllocationResult:
    """Closed-form minimiser of sum r_j C_j log(r_j B_X^2 / eps_j^2) s.t. sum beta_j eps_j = eps."""
    r, C, beta = (np.asarray(v, dtype=np.float64) for v in (r, C, beta))
    if not (r.ndim == C.ndim == beta.ndim == 1 and len(r) == len(C) == len(beta) >= 1):
        raise InvalidParameterError("r, C and beta must be equal-length non-empty lists",
                                    {'lengths': [int(r.size), int(C.size), int(beta.size)]})
    require(bool(np.all(r >= 1)), "ranks must be at least 1")
    require(bool(np.all(C > 0)) and bool(np.all(beta > 0)), "C and beta must be positive")
    require(eps > 0 and B_X > 0, "eps and B_X must be positive", eps=eps, B_X=B_X)

    rC = r * C
    S = float(rC.sum())
    epsilons = eps * rC / (beta * S)
    b = np.sqrt(B_X * beta * S) / np.sqrt(rC)
    objective = float(np.sum(rC * np.log(b ** 2 / eps ** 2)))
    direct = float(np.sum(rC * np.log(r * B_X ** 2 / epsilons ** 2)))
    consistent = math.isclose(objective, direct, rel_tol=CONSISTENCY_RTOL, abs_tol=1e-12)
    if not consistent:
        logger.warning("allocation objectives differ: b-form %.6g, direct %.6g", objective, direct)
    return AllocationResult(
        epsilons=epsilons.tolist(),
        multiplier=2 * S / eps,
        objective=objective,
        direct_objective=direct,
        b=b.tolist(),
        constraint_value=float(np.sum(beta * epsilons)),
        consistent=consistent,
    )


def _checked_ranks(components, ranks):
    if ranks is None:
        return [c.rank for c in components]
    ranks = list(ranks)
    if len(ranks) != len(components):
        raise InvalidParameterError(f"expected {len(components)} ranks, one per component",
                                    {'components': [c.name for c in components]})
    for comp, r in zip(components, ranks):
        if not (isinstance(r, (int, np.integer)) and 1 <= r <= min(comp.rows, comp.cols)):
            raise InvalidParameterError(f"rank {r!r} of component {comp.name} outside [1, {min(comp.rows, comp.cols)}]")
    return ranks


def rank_bound(spec: ArchSpec, budget: ParamBudget, ranks: Optional[Sequence[int]], n, delta,
               approx=0.0) -> BoundReport:
    """Rank-based bound; ``ranks`` follows the component order of ``component_weights`` (None: budget caps)."""
    require(delta > 0, "delta must be positive for the rank bound", delta=delta)
    components = component_weights(spec, budget)
    r = _checked_ranks(components, ranks)
    weights = [c.weight for c in components]
    if min(weights) <= 0:
        raise InvalidParameterError("rank bound needs positive component weights",
                                    {c.name: c.weight for c in components})
    C = [RANK_COVER_CONSTANT] * len(components)
    allocation = rank_allocation(r, C, weights, delta, budget.B_X)
    log_cover = sum(max(0.0, ri * Ci * math.log(bi ** 2 / delta ** 2))
                    for ri, Ci, bi in zip(r, C, allocation.b))
    report = excess_risk_from_log_cover(penalty_constant(spec, budget), n, log_cover, budget.kappa, delta,
                                        approx, family='rank', arch_kind=spec.kind,
                                        inputs_echo=_echo(spec, budget))
    report.inputs_echo['allocation'] = allocation.to_dict()
    if not allocation.consistent:
        report.notes.append(f"allocation objectives differ: b-form {allocation.objective:.6g}, "
                            f"direct {allocation.direct_objective:.6g}")
    return report


def finite_class_offset_bound(N, n, beta) -> float:
    """(1 + log N) / (2 n beta) for a class of N functions."""
    require(N >= 1 and n >= 1 and beta > 0, "need N >= 1, n >= 1 and beta > 0", N=N, n=n, beta=beta)
    return (1 + math.log(N)) / (2 * n * beta)


def _unit_cover(budget, comp):
    if budget.C1 is not None:
        return budget.C1 * budget.B_x ** 2 * comp.cap ** 2
    return log_cover_l11_linear(budget.B_x, comp.cap, 1.0, comp.rows, comp.cols)


def generic_log_cover(spec: ArchSpec, budget: ParamBudget, delta) -> float:
    """(sum_j (a_j beta_j^2)^{1/3})^3 / delta^2 with a_j the unit-scale l1,1 cover of block j.

    This is the minimum of sum_j a_j / eps_j^2 subject to sum_j beta_j eps_j = delta.
    """
    require(delta > 0, "delta must be positive", delta=delta)
    total = sum((_unit_cover(budget, comp) * comp.weight ** 2) ** (1.0 / 3.0)
                for comp in component_weights(spec, budget))
    return total ** 3 / delta ** 2


def generic_allocation(spec: ArchSpec, budget: ParamBudget, delta) -> List[float]:
    """Per-component scales eps_j proportional to (a_j / beta_j)^{1/3}, with sum beta_j eps_j = delta."""
    require(delta > 0, "delta must be positive", delta=delta)
    components = component_weights(spec, budget)
    shares = [(_unit_cover(budget, c) / c.weight) ** (1.0 / 3.0) if c.weight > 0 else 0.0 for c in components]
    norm = sum(c.weight * s for c, s in zip(components, shares))
    return [delta * s / norm if norm > 0 else 0.0 for s in shares]


def cover_summary(spec: ArchSpec, budget: ParamBudget, delta) -> dict:
    """Covering numbers of every parameter block at scale delta, under both allocations."""
    components = component_weights(spec, budget)
    generic_eps = generic_allocation(spec, budget, delta)
    rank = None
    if min(c.weight for c in components) > 0:
        rank = rank_allocation([c.rank for c in components], [RANK_COVER_CONSTANT] * len(components),
                               [c.weight for c in components], delta, budget.B_X)
    rows = []
    for j, comp in enumerate(components):
        eps_l11 = generic_eps[j]
        row = {
            'component': comp.name,
            'weight': comp.weight,
            'cap': comp.cap,
            'rank': comp.rank,
            'eps_l11': eps_l11,
            'log_cover_l11': log_cover_l11_linear(budget.B_x, comp.cap, eps_l11, comp.rows, comp.cols)
            if eps_l11 > 0 else 0.0,
        }
        if rank is not None:
            row['eps_rank'] = rank.epsilons[j]
            row['log_cover_rank'] = log_cover_rank_linear(budget.B_x, comp.cap, rank.epsilons[j], comp.rank)
        rows.append(row)
    terms = norm_complexity_terms(budget, spec)
    Gamma = terms['Gamma']
    return {
        'delta': float(delta),
        'C1': linear_cover_constant(spec, budget),
        'components': rows,
        'generic_log_cover': generic_log_cover(spec, budget, delta),
        'norm_log_cover': max(0.0, math.log(Gamma ** 3 / delta ** 2)) if Gamma > 0 else 0.0,
        'norm_terms': terms,
        'allocation': rank.to_dict() if rank is not None else None,
    }


def offset_generic_bound(spec: ArchSpec, budget: ParamBudget, n, delta, approx=0.0) -> BoundReport:
    log_cover = generic_log_cover(spec, budget, delta)
    return excess_risk_from_log_cover(penalty_constant(spec, budget), n, log_cover, budget.kappa, delta,
                                      approx, family='offset-generic', arch_kind=spec.kind,
                                      inputs_echo=_echo(spec, budget))


def _tail_of(budget, regime):
    tail = budget.tail
    if tail is None or tail.regime != regime:
        raise InvalidParameterError(f"the {regime} bound needs a {regime} tail model")
    return tail


def subgaussian_bound(spec: ArchSpec, budget: ParamBudget, n, delta, M=None, approx=0.0) -> BoundReport:
    tail = _tail_of(budget, 'subgaussian')
    M = optimal_threshold(tail, n) if M is None else M
    require(M > 0, "truncation threshold must be positive", M=M)
    report = norm_bound(spec, budget.with_input_cap(M), n, delta, approx)
    report = replace(report, family='subgaussian', truncation_threshold=float(M),
                     truncation_term=subgaussian_tail_term(budget.kappa, tail, M),
                     inputs_echo=_echo(spec, budget))
    report.inputs_echo['truncated_budget'] = budget.with_input_cap(M).to_dict()
    return report


def heavytail_bound(spec: ArchSpec, budget: ParamBudget, n, delta, M=None, approx=0.0,
                    ranks=None) -> BoundReport:
    tail = _tail_of(budget, 'heavytail')
    M = optimal_threshold(tail, n) if M is None else M
    require(M > 0, "truncation threshold must be positive", M=M)
    robust = replace(budget.with_input_cap(M), kappa=budget.kappa * tail.B_psi)
    report = rank_bound(spec, robust, ranks, n, delta, approx)
    allocation = report.inputs_echo.get('allocation')
    report = replace(report, family='heavytail', truncation_threshold=float(M),
                     truncation_term=heavy_tail_term(tail, budget.kappa, M),
                     inputs_echo=_echo(spec, budget))
    report.inputs_echo['truncated_budget'] = robust.to_dict()
    report.inputs_echo['allocation'] = allocation
    return report


def evaluate_bound(family, spec, budget, n, delta, approx=0.0, M=None) -> BoundReport:
    """Dispatch on the family name."""
    if family == 'offset-generic':
        return offset_generic_bound(spec, budget, n, delta, approx)
    if family == 'norm':
        return norm_bound(spec, budget, n, delta, approx)
    if family == 'rank':
        return rank_bound(spec, budget, None, n, delta, approx)
    if family == 'subgaussian':
        return subgaussian_bound(spec, budget, n, delta, M, approx)
    if family == 'heavytail':
        return heavytail_bound(spec, budget, n, delta, M, approx)
    raise InvalidParameterError(f"unknown bound family {family!r}")


def minimize_over_delta(evaluate: Callable[[float], BoundReport], grid: Iterable[float]) -> BoundReport:
    """Smallest-total report over the grid; ties keep the earliest delta."""
    best = None
    for delta in grid:
        report = evaluate(float(delta))
        if best is None or report.total < best.total:
            best = report
    require(best is not None, "delta grid is empty")
    return best


def best_bound(family, spec, budget, n, grid, approx=0.0, M=None) -> BoundReport:
    return minimize_over_delta(lambda delta: evaluate_bound(family, spec, budget, n, delta, approx, M), grid)
