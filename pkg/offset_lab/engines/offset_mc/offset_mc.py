"""
Offset Rademacher complexity of finite function classes, and matrix-series bounds.

For a class sample G (rows = functions, columns = sample points):

    R_off(G, beta) = E_tau max_j [ (1/n) sum_i tau_i G_ji - (beta/n) sum_i G_ji^2 ]

offset_complexity_exact enumerates all 2^n sign vectors (n <= 20) in blocks;
offset_complexity_mc draws sign vectors in fixed-size chunks, one RNG child stream
per chunk, so the estimate does not depend on how many workers run the chunks.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from ...models.reports import FunctionClassSample, OffsetEstimate
from ...utils.errors import InvalidParameterError, SizeLimitError, require
from ...utils.matrix_kit import as_mat, spectral_norm
from ..tails.tails import robust_loss
from ..transformer.transformer import predict, sample_params

logger = logging.getLogger(__name__)

MAX_EXACT_N = 20
EXACT_BLOCK = 1 << 14
MC_CHUNK = 4096
QUADRATURE_POINTS = 64
EXCESS_LOSSES = ('squared', 'absolute', 'logistic')


def _offset_sups(signs, G, quadratic):
    """max_j of the offset process for each row of ``signs``."""
    n = G.shape[1]
    return (signs @ G.T / n - quadratic[None, :]).max(axis=1)


def _quadratic(G, beta):
    return beta / G.shape[1] * np.sum(G * G, axis=1)


def offset_complexity_exact(fc: FunctionClassSample, beta) -> OffsetEstimate:
    require(beta > 0, "beta must be positive", beta=beta)
    n = fc.n
    if n > MAX_EXACT_N:
        raise SizeLimitError(f"exact enumeration is limited to n <= {MAX_EXACT_N}; use offset_complexity_mc",
                             {'n': n})
    G, quadratic = fc.G, _quadratic(fc.G, beta)
    bits = np.arange(n, dtype=np.int64)
    total_count = 1 << n
    partial = []
    for start in range(0, total_count, EXACT_BLOCK):
        idx = np.arange(start, min(start + EXACT_BLOCK, total_count), dtype=np.int64)
        signs = 1.0 - 2.0 * ((idx[:, None] >> bits[None, :]) & 1)
        partial.append(float(_offset_sups(signs, G, quadratic).sum()))
    value = math.fsum(partial) / total_count
    return OffsetEstimate(value=value, std_error=0.0, method='exact', n_draws=total_count, beta=float(beta))


def _mc_chunk(task):
    G, quadratic, stream, size = task
    gen = stream.generator()
    signs = 2.0 * gen.integers(0, 2, size=(size, G.shape[1])) - 1.0
    return _offset_sups(signs, G, quadratic)


def offset_complexity_mc(fc: FunctionClassSample, beta, n_draws, rng, chunk=MC_CHUNK, workers=1) -> OffsetEstimate:
    require(beta > 0, "beta must be positive", beta=beta)
    require(n_draws >= 100, "Monte Carlo needs at least 100 draws", n_draws=n_draws)
    require(chunk >= 1, "chunk size must be positive", chunk=chunk)
    G, quadratic = fc.G, _quadratic(fc.G, beta)
    tasks = [(G, quadratic, rng.child(c), min(chunk, n_draws - start))
             for c, start in enumerate(range(0, n_draws, chunk))]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            sups = list(pool.map(_mc_chunk, tasks))
    else:
        sups = [_mc_chunk(task) for task in tasks]
    values = np.concatenate(sups)
    std_error = float(values.std(ddof=1) / math.sqrt(n_draws))
    logger.debug("offset MC: %d draws in %d chunks, value %.6g +- %.2g",
                 n_draws, len(tasks), values.mean(), std_error)
    return OffsetEstimate(value=float(values.mean()), std_error=std_error, method='monte_carlo',
                          n_draws=int(n_draws), beta=float(beta))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _absolute_excess(gap, noise_sd):
    """E|gap + e| - E|e| for e ~ N(0, noise_sd^2)."""
    if noise_sd == 0:
        return np.abs(gap)
    z = gap / noise_sd
    folded = noise_sd * 2 * stats.norm.pdf(z) + gap * (1 - 2 * stats.norm.cdf(-z))
    return folded - noise_sd * math.sqrt(2 / math.pi)


def _gaussian_expectation(fn, noise_sd):
    """E fn(e) for e ~ N(0, noise_sd^2) by Gauss-Hermite quadrature (probabilists' weight)."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(QUADRATURE_POINTS)
    weights = weights / weights.sum()
    return sum(w * fn(noise_sd * z) for z, w in zip(nodes, weights))


def excess_loss(loss, f, f_star, noise_sd=0.0, alpha=None):
    """Conditional excess loss g = E_{Y|X}[l(Y, f) - l(Y, f*)], elementwise over arrays.

    squared and absolute use Y = f* + N(0, noise_sd^2); logistic uses Y = +-1 with
    P(Y = 1) = sigmoid(f*). With ``alpha`` the loss is replaced by its robust version
    (1/alpha) log(1 + x + x^2/2), x = alpha * l, integrated by quadrature.
    """
    if loss not in EXCESS_LOSSES:
        raise InvalidParameterError(f"unknown loss {loss!r}", {'choices': list(EXCESS_LOSSES)})
    require(noise_sd >= 0, "noise_sd must be nonnegative", noise_sd=noise_sd)
    f = np.asarray(f, dtype=np.float64)
    f_star = np.asarray(f_star, dtype=np.float64)

    if loss == 'logistic':
        p = special.expit(f_star)
        if alpha is None:
            return p * (_softplus(-f) - _softplus(-f_star)) + (1 - p) * (_softplus(f) - _softplus(f_star))
        return (p * (robust_loss(_softplus(-f), alpha) - robust_loss(_softplus(-f_star), alpha))
                + (1 - p) * (robust_loss(_softplus(f), alpha) - robust_loss(_softplus(f_star), alpha)))

    gap = f_star - f
    if alpha is None:
        return gap ** 2 if loss == 'squared' else _absolute_excess(gap, noise_sd)

    base = np.square if loss == 'squared' else np.abs
    if noise_sd == 0:
        return robust_loss(base(gap), alpha)
    return _gaussian_expectation(lambda e: robust_loss(base(gap + e), alpha) - robust_loss(base(e), alpha),
                                 noise_sd)


def build_class_sample(spec, budget, loss, teacher, X_sample, grid_size, rng, noise_sd=0.0,
                       include_teacher=False, alpha=None) -> FunctionClassSample:
    """Excess-loss matrix of ``grid_size`` random budget-respecting transformers (plus the teacher)."""
    if not (isinstance(grid_size, int) and grid_size >= 1):
        raise InvalidParameterError("grid_size must be a positive integer", {'grid_size': grid_size})
    X = np.stack([as_mat(X_i, 'X') for X_i in X_sample])
    f_star = predict(teacher, X, spec)
    rows = []
    if include_teacher:
        rows.append(excess_loss(loss, f_star, f_star, noise_sd, alpha))
    for j in range(grid_size):
        params = sample_params(spec, budget, rng.child(j))
        rows.append(excess_loss(loss, predict(params, X, spec), f_star, noise_sd, alpha))
    return FunctionClassSample.from_values(np.array(rows))


@dataclass(frozen=True)
class MatrixSeriesBounds:
    """Matrix Gaussian/Rademacher series bounds for Z = sum_k g_k B_k."""
    v: float
    mean_bound: float
    d1: int
    d2: int

    def tail(self, t):
        """P(||Z||_2 >= t) <= (d1 + d2) exp(-t^2 / 2v)."""
        if self.v == 0:
            return 0.0 if t > 0 else float(self.d1 + self.d2)
        return (self.d1 + self.d2) * math.exp(-t * t / (2 * self.v))

    def to_dict(self):
        return {'v': self.v, 'mean_bound': self.mean_bound, 'd1': self.d1, 'd2': self.d2}


def _series_stack(B_list):
    if len(B_list) == 0:
        raise InvalidParameterError("matrix series needs at least one matrix")
    mats = [as_mat(B, 'B') for B in B_list]
    if len({M.shape for M in mats}) != 1:
        raise InvalidParameterError("all series matrices must share one shape",
                                    {'shapes': sorted({M.shape for M in mats})})
    return np.stack(mats)


def matrix_series_bounds(B_list) -> MatrixSeriesBounds:
    stack = _series_stack(B_list)
    _, d1, d2 = stack.shape
    row_variance = np.einsum('kij,klj->il', stack, stack)   # sum B B^T
    col_variance = np.einsum('kji,kjl->il', stack, stack)   # sum B^T B
    v = max(spectral_norm(row_variance), spectral_norm(col_variance))
    return MatrixSeriesBounds(v=v, mean_bound=math.sqrt(2 * v * math.log(d1 + d2)), d1=d1, d2=d2)


def series_norms(B_list, n_draws, rng, coefficients='gaussian'):
    """Spectral norms of n_draws independent realisations of sum_k g_k B_k."""
    stack = _series_stack(B_list)
    gen = rng.generator()
    if coefficients == 'gaussian':
        coef = gen.standard_normal((n_draws, len(stack)))
    elif coefficients == 'rademacher':
        coef = 2.0 * gen.integers(0, 2, size=(n_draws, len(stack))) - 1.0
    else:
        raise InvalidParameterError(f"unknown coefficient law {coefficients!r}")
    Z = np.einsum('nk,kij->nij', coef, stack)
    return np.linalg.norm(Z, ord=2, axis=(1, 2))
