"""
Truncation, tail terms and robust losses for unbounded inputs.

Sub-Gaussian inputs:
    P(||X||_F >= t) <= (T+d) exp(-t^2 / 2 nu^2)
    E[||X||^2 1(||X|| > M)] <= (T+d)(M^2 + 2 nu^2) exp(-M^2 / 2 nu^2)
    tail term = C_trunc * kappa * (T+d)(M^2 + 2 nu^2) exp(-M^2 / 2 nu^2)

Heavy-tailed inputs (P(|X_ij| > x) <= C x^-beta, beta > 2):
    P(||X||_2 > t) <= C (Td)^{1 + beta/2} t^-beta                 (union bound)
    tail term = kappa * B_psi * C (Td)^{1 + beta/2} * beta/(beta-2) * M^{2-beta}

Note on nu: the variance proxy is defined as a max of second-moment norms but
enters the tail as nu^2. The config value ``nu`` is used directly as the
exponent scale; ``second_moment_proxy`` reports the moment-based quantity
separately so the two can be compared.
"""

import logging
import math

import numpy as np

from ...models.arch import TailModel
from ...utils.errors import InvalidParameterError, require
from ...utils.matrix_kit import as_mat, norm_fro, project_frobenius_ball, spectral_norm

logger = logging.getLogger(__name__)

NU_SCALE_NOTE = ("nu is used as the exponent scale exp(-t^2/2nu^2); the moment-based proxy "
                 "max(||E X^T X||, ||E X X^T||) is reported separately")


def second_moment_proxy(samples):
    """max(||mean X^T X||_2, ||mean X X^T||_2) over a list of equally shaped matrices."""
    require(len(samples) >= 1, "need at least one sample")
    stack = np.stack([as_mat(X) for X in samples])
    gram_cols = np.einsum('nti,ntj->ij', stack, stack) / len(stack)   # E[X^T X]
    gram_rows = np.einsum('nit,njt->ij', stack, stack) / len(stack)   # E[X X^T]
    return max(spectral_norm(gram_cols), spectral_norm(gram_rows))


def _subgaussian(tail: TailModel):
    if tail.regime != 'subgaussian':
        raise InvalidParameterError("tail model is not sub-Gaussian", {'regime': tail.regime})
    return tail.nu


def _heavy(tail: TailModel):
    if tail.regime != 'heavytail':
        raise InvalidParameterError("tail model is not heavy-tailed", {'regime': tail.regime})
    require(tail.beta is not None and tail.beta > 2, "tail index must exceed 2", beta=tail.beta)
    return tail.beta


def subgaussian_tail_probability(tail: TailModel, t):
    nu = _subgaussian(tail)
    return (tail.T + tail.d) * math.exp(-t * t / (2 * nu * nu))


def subgaussian_tail_moment(tail: TailModel, M):
    """Bound on E[||X||_F^2 1(||X||_F > M)]."""
    nu = _subgaussian(tail)
    return (tail.T + tail.d) * (M * M + 2 * nu * nu) * math.exp(-M * M / (2 * nu * nu))


def subgaussian_tail_term(kappa, tail: TailModel, M):
    require(M >= 0, "threshold must be nonnegative", M=M)
    return tail.C_trunc * kappa * subgaussian_tail_moment(tail, M)


def heavy_tail_constant(tail: TailModel):
    """C' = C (Td)^{1 + beta/2}."""
    beta = _heavy(tail)
    return tail.C * (tail.T * tail.d) ** (1 + beta / 2)


def heavy_tail_probability(tail: TailModel, t):
    require(t > 0, "t must be positive", t=t)
    return heavy_tail_constant(tail) * t ** (-tail.beta)


def heavy_tail_first_moment(tail: TailModel, M):
    """Bound on E[||X||_2 1(||X||_2 > M)] = C' beta/(beta-1) M^{1-beta}."""
    require(M > 0, "threshold must be positive", M=M)
    beta = _heavy(tail)
    return heavy_tail_constant(tail) * beta / (beta - 1) * M ** (1 - beta)


def heavy_tail_moment(tail: TailModel, M):
    """Bound on E[||X||_2^2 1(||X||_2 > M)] = C' beta/(beta-2) M^{2-beta}."""
    require(M > 0, "threshold must be positive", M=M)
    beta = _heavy(tail)
    return heavy_tail_constant(tail) * beta / (beta - 2) * M ** (2 - beta)


def heavy_tail_term(tail: TailModel, kappa, M):
    return kappa * tail.B_psi * heavy_tail_moment(tail, M)


def optimal_threshold(tail: TailModel, n):
    """sub-Gaussian: nu sqrt(2 log((T+d) n)); heavy-tailed: n^{1/(beta-2)}."""
    require(n >= 2, "threshold selection needs n >= 2", n=n)
    if tail.regime == 'subgaussian':
        nu = _subgaussian(tail)
        return nu * math.sqrt(2 * math.log((tail.T + tail.d) * n))
    beta = _heavy(tail)
    return float(n) ** (1.0 / (beta - 2))


def threshold_objective(tail: TailModel, n, M, complexity_scale, kappa=1.0):
    """Complexity growing like log M against the sub-Gaussian tail term."""
    return complexity_scale / n * (1 + 2 * math.log(M)) + subgaussian_tail_term(kappa, tail, M)


def robust_loss(ell, alpha):
    """Catoni-type loss (1/alpha) log(1 + x + x^2/2) with x = alpha * ell, for ell >= 0."""
    require(alpha > 0, "alpha must be positive", alpha=alpha)
    ell = np.asarray(ell, dtype=np.float64)
    if np.any(ell < 0):
        raise InvalidParameterError("robust loss needs a nonnegative base loss")
    x = alpha * ell
    value = np.log1p(x + 0.5 * x * x) / alpha
    return float(value) if value.ndim == 0 else value


def robust_loss_derivative(ell, alpha):
    """d/d ell of robust_loss = psi'(x) = (1 + x)/(1 + x + x^2/2), bounded by 1."""
    require(alpha > 0, "alpha must be positive", alpha=alpha)
    x = alpha * np.asarray(ell, dtype=np.float64)
    value = (1 + x) / (1 + x + 0.5 * x * x)
    return float(value) if value.ndim == 0 else value


def truncate_inputs(X_stack, M):
    """Project every matrix of a (n, T, d) stack onto the Frobenius ball; returns (stack, mask)."""
    require(M > 0, "truncation radius must be positive", M=M)
    X_stack = np.asarray(X_stack, dtype=np.float64)
    truncated = np.array([project_frobenius_ball(X, M) for X in X_stack])
    mask = np.array([norm_fro(X) > M * (1 + 1e-12) for X in X_stack])
    return truncated, mask


def truncate_dataset(data, M):
    """Apply the truncation operator to every (X, y) pair.

    Returns the truncated pairs and the fraction of inputs that were moved.
    """
    require(M > 0, "truncation radius must be positive", M=M)
    if not data:
        return [], 0.0
    stack = np.stack([as_mat(X) for X, _ in data])
    truncated, mask = truncate_inputs(stack, M)
    out = [(Xt, y) for Xt, (_, y) in zip(truncated, data)]
    return out, float(mask.mean())
