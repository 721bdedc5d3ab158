"""
Dense matrix utilities shared by every engine.

A matrix is a 2-D float64 ``numpy.ndarray``. Norms, projections and the
rank truncation all go through LAPACK (``scipy.linalg.svd``); every desk-scale
matrix is at most a few dozen rows, so the full factorization is used instead
of power iteration.

Random draws come from ``RngStream``: a (seed, stream_id) pair mapped onto a
counter-based Philox generator. Trial ``i`` always owns stream ``i`` (or a
``child`` of it), so results do not depend on how many workers run the trials.
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy import linalg

from .errors import InvalidParameterError, require

# Norm comparisons against a cap allow this much relative slack
PROJECTION_TOL = 1e-12


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by (seed, stream_id, path)."""
    seed: int
    stream_id: int = 0
    path: Tuple[int, ...] = field(default_factory=tuple)

    def child(self, *keys: int) -> 'RngStream':
        """Derive an independent sub-stream; the derivation depends only on ``keys``."""
        return RngStream(self.seed, self.stream_id, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=int(self.seed) % 2**64,
                                     spawn_key=(int(self.stream_id) % 2**64,) + self.path)
        return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class Distribution:
    """Entry law for ``sample_matrix``.

    kind: 'gaussian' (scale = sd), 'uniform_ball' (scale = radius B),
          'pareto' (tail_index = beta, scale = x_min), 'student_t' (tail_index = dof)
    """
    kind: str
    scale: float = 1.0
    tail_index: float = 0.0

    @classmethod
    def gaussian(cls, s=1.0):
        return cls('gaussian', scale=s)

    @classmethod
    def uniform_ball(cls, radius):
        return cls('uniform_ball', scale=radius)

    @classmethod
    def pareto(cls, beta, x_min=1.0):
        return cls('pareto', scale=x_min, tail_index=beta)

    @classmethod
    def student_t(cls, beta):
        return cls('student_t', tail_index=beta)

    def validate(self):
        if self.kind in ('gaussian', 'uniform_ball'):
            require(self.scale > 0, f"{self.kind} scale must be positive", scale=self.scale)
        elif self.kind == 'pareto':
            require(self.tail_index > 2, "pareto tail index must exceed 2", beta=self.tail_index)
            require(self.scale > 0, "pareto x_min must be positive", x_min=self.scale)
        elif self.kind == 'student_t':
            require(self.tail_index > 2, "student_t degrees of freedom must exceed 2", beta=self.tail_index)
        else:
            raise InvalidParameterError(f"unknown distribution '{self.kind}'")
        return self


def as_mat(A, name='matrix'):
    """Coerce to a finite 2-D float64 array."""
    M = np.asarray(A, dtype=np.float64)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    require(M.ndim == 2 and M.shape[0] >= 1 and M.shape[1] >= 1,
            f"{name} must be a non-empty 2-D matrix", shape=list(M.shape))
    require(bool(np.all(np.isfinite(M))), f"{name} has non-finite entries")
    return M


def row_softmax(A):
    """Row-wise softmax with per-row max subtraction; works on stacked (..., T, T) inputs."""
    A = np.asarray(A, dtype=np.float64)
    shifted = A - A.max(axis=-1, keepdims=True)
    E = np.exp(shifted)
    return E / E.sum(axis=-1, keepdims=True)


def spectral_norm(W):
    W = np.asarray(W, dtype=np.float64)
    if W.ndim == 1:
        return float(np.linalg.norm(W))
    if not np.any(W):
        return 0.0
    return float(linalg.svd(W, compute_uv=False)[0])


def norm_l11(W):
    return float(np.abs(np.asarray(W, dtype=np.float64)).sum())


def norm_fro(W):
    return float(np.linalg.norm(np.asarray(W, dtype=np.float64).ravel()))


def project_frobenius_ball(X, M):
    """Truncation operator: X if ||X||_F <= M, else M X / ||X||_F."""
    require(M > 0, "truncation radius must be positive", M=M)
    X = np.asarray(X, dtype=np.float64)
    nrm = norm_fro(X)
    if nrm <= M * (1 + PROJECTION_TOL):
        return X
    return X * (M / nrm)


def project_rows_unit_ball(X):
    """Row-wise projection onto the unit l2 ball; also accepts (..., T, d) stacks."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    scale = np.where(norms > 1 + PROJECTION_TOL, 1.0 / np.maximum(norms, 1.0), 1.0)
    return X * scale


def rank_truncate(W, r):
    """Best rank-r approximation in Frobenius norm (Eckart-Young)."""
    W = as_mat(W)
    require(1 <= r <= min(W.shape), "rank must lie in [1, min(rows, cols)]", r=r, shape=list(W.shape))
    U, s, Vt = linalg.svd(W, full_matrices=False)
    return (U[:, :r] * s[:r]) @ Vt[:r]


def matrix_rank(W, tol=1e-9):
    s = linalg.svd(np.asarray(W, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def _draw(dist, shape, gen):
    if dist.kind == 'gaussian':
        return gen.normal(0.0, dist.scale, size=shape)
    if dist.kind == 'pareto':
        magnitude = dist.scale * (gen.pareto(dist.tail_index, size=shape) + 1.0)
        sign = gen.integers(0, 2, size=shape) * 2 - 1
        return sign * magnitude
    if dist.kind == 'student_t':
        return gen.standard_t(dist.tail_index, size=shape)

    # uniform over the Frobenius ball: gaussian direction, radius B U^{1/(T d)}
    direction = gen.normal(size=shape)
    flat = direction.reshape(-1, shape[-2] * shape[-1])
    norms = np.linalg.norm(flat, axis=1)
    dim = shape[-2] * shape[-1]
    radius = dist.scale * gen.random(size=flat.shape[0]) ** (1.0 / dim)
    flat = flat * (radius / np.where(norms > 0, norms, 1.0))[:, None]
    return flat.reshape(shape)


def sample_matrix(dist, T, d, rng):
    """One T x d matrix with i.i.d. entries from ``dist``; deterministic given ``rng``."""
    dist.validate()
    require(T >= 1 and d >= 1, "matrix shape must be positive", T=T, d=d)
    return _draw(dist, (T, d), rng.generator())


def sample_matrices(dist, count, T, d, rng):
    """A (count, T, d) stack drawn from one stream."""
    dist.validate()
    require(count >= 1 and T >= 1 and d >= 1, "stack shape must be positive", count=count, T=T, d=d)
    return _draw(dist, (count, T, d), rng.generator())
