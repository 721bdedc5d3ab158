"""
Transformer forward passes, constraint projection and budget audits.

Three architectures share one attention head:

    head(X) = sigma(softmax(X W_QK X^T) X W_v) W_c                (T x d)

    single-head   f(X) = w^T head(X)[cls]
    multi-head    f(X) = w^T sum_h head_h(X)[cls]
    multi-layer   X <- Pi(sigma(Pi(head_l(X))))  for l = 1..L,  f(X) = w^T X[cls]

where Pi projects every row onto the unit l2 ball. Every pass is written over a
stack of inputs (n, T, d); the single-input operations are the n = 1 case, so
training, risk estimation and the scalar API all run the same arithmetic.

Parameter sets are kept inside a ParamBudget by projection (scaling, and rank
truncation in rank mode) rather than by rejection, so every sampled or trained
parameter set is usable.
"""

import logging

import numpy as np

from ...models.arch import ArchSpec, BudgetAudit, ConstraintCheck, ParamBudget, TransformerParams
from ...utils.errors import InvalidParameterError
from ...utils.matrix_kit import (as_mat, matrix_rank, norm_l11, project_rows_unit_ball, rank_truncate,
                                 row_softmax, spectral_norm)

logger = logging.getLogger(__name__)

AUDIT_TOL = 1e-9

# budget field capping each weight matrix
CAP_FIELDS = {'W_QK': 'B_QK', 'W_v': 'B_v', 'W_c': 'B_c'}
RANK_FIELDS = {'W_QK': 'r_QK', 'W_v': 'r_v', 'W_c': 'r_c'}


def _as_stack(X, spec):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (spec.T, spec.d):
        raise InvalidParameterError(f"inputs must have shape (T, d) = ({spec.T}, {spec.d})",
                                    {'shape': list(X.shape)})
    return X


def attention_head(X, W_QK, W_v, W_c, spec):
    """sigma(softmax(X W_QK X^T) X W_v) W_c for a (n, T, d) stack."""
    scores = X @ W_QK @ np.swapaxes(X, -1, -2)
    attended = row_softmax(scores) @ X @ W_v
    return spec.activate(attended) @ W_c


def _checked(params, X, spec, kind):
    if spec.kind != kind:
        raise InvalidParameterError(f"architecture kind is {spec.kind}, expected {kind}")
    params.check_shapes(spec)
    return _as_stack(X, spec)


def _single_head_batch(params, X, spec):
    Y = attention_head(X, params.W_QK[0][0], params.W_v[0][0], params.W_c[0][0], spec)
    return Y[:, spec.cls_index, :] @ params.w


def _multi_head_batch(params, X, spec):
    total = np.zeros((X.shape[0], spec.d))
    for h in range(spec.n_heads):
        Y = attention_head(X, params.W_QK[0][h], params.W_v[0][h], params.W_c[0][h], spec)
        total = total + Y[:, spec.cls_index, :]
    return total @ params.w


def layer_inputs(params, X, spec):
    """Inputs X^(1), ..., X^(L+1) of the multi-layer recursion for a (n, T, d) stack."""
    if spec.k != spec.d:
        raise InvalidParameterError("multi-layer blocks need k == d", {'k': spec.k, 'd': spec.d})
    states = [X]
    for l in range(spec.n_layers):
        Phi = attention_head(states[-1], params.W_QK[l][0], params.W_v[l][0], params.W_c[l][0], spec)
        states.append(project_rows_unit_ball(spec.activate(project_rows_unit_ball(Phi))))
    return states


def _multi_layer_batch(params, X, spec):
    return layer_inputs(params, X, spec)[-1][:, spec.cls_index, :] @ params.w


_BATCH_FORWARD = {'SH': _single_head_batch, 'MH': _multi_head_batch, 'ML': _multi_layer_batch}


def predict(params: TransformerParams, X_batch, spec: ArchSpec):
    """Scalar predictions for a (n, T, d) stack (or a single T x d input)."""
    X = _checked(params, X_batch, spec, spec.kind)
    return _BATCH_FORWARD[spec.kind](params, X, spec)


def forward_single_head(params, X, spec):
    X = _checked(params, as_mat(X, 'X'), spec, 'SH')
    return float(_single_head_batch(params, X, spec)[0])


def forward_multi_head(params, X, spec):
    X = _checked(params, as_mat(X, 'X'), spec, 'MH')
    return float(_multi_head_batch(params, X, spec)[0])


def forward_multi_layer(params, X, spec):
    X = _checked(params, as_mat(X, 'X'), spec, 'ML')
    return float(_multi_layer_batch(params, X, spec)[0])


def forward(params, X, spec):
    """Dispatch on ``spec.kind``."""
    return {'SH': forward_single_head, 'MH': forward_multi_head, 'ML': forward_multi_layer}[spec.kind](
        params, X, spec)


def _matrix_norm(M, budget):
    return norm_l11(M) if budget.budget_mode == 'l11' else spectral_norm(M)


def _scale_to(M, cap, measured):
    if measured <= cap:
        return M
    return M * (cap / measured) if measured > 0 else M


def project_params(params: TransformerParams, budget: ParamBudget, spec: ArchSpec) -> TransformerParams:
    """Map ``params`` into the budget set.

    spectral: scale each matrix by min(1, B / ||.||_2)
    l11:      scale each matrix by min(1, B / ||.||_{1,1})
    rank:     truncate to the rank cap, then spectral scaling
    The readout is scaled to ||w||_2 <= B_w in every mode.
    """
    params.check_shapes(spec)
    ranks = dict(zip(('W_c', 'W_QK', 'W_v'), budget.ranks(spec)))

    def project(name, M):
        if budget.budget_mode == 'rank':
            r = ranks[name]
            if r > min(M.shape):
                raise InvalidParameterError(f"rank cap {r} exceeds the dimensions of {name}",
                                            {'shape': list(M.shape)})
            if r < min(M.shape):
                M = rank_truncate(M, r)
        cap = getattr(budget, CAP_FIELDS[name])
        return _scale_to(np.array(M, dtype=np.float64), cap, _matrix_norm(M, budget))

    projected = params.map_matrices(project)
    w_norm = float(np.linalg.norm(projected.w))
    return TransformerParams(W_QK=projected.W_QK, W_v=projected.W_v, W_c=projected.W_c,
                             w=_scale_to(projected.w, budget.B_w, w_norm))


def check_budget(params: TransformerParams, budget: ParamBudget, spec: ArchSpec) -> BudgetAudit:
    """Measured norms (and ranks in rank mode) against their caps, tolerance 1e-9."""
    audit = BudgetAudit()
    norm_name = 'l11' if budget.budget_mode == 'l11' else 'spectral'
    ranks = dict(zip(('W_c', 'W_QK', 'W_v'), budget.ranks(spec)))
    for name, l, h, M in params.matrices():
        cap = getattr(budget, CAP_FIELDS[name])
        measured = _matrix_norm(M, budget)
        audit.checks.append(ConstraintCheck(f'{name}[{l}][{h}].{norm_name}', measured, cap,
                                            measured <= cap * (1 + AUDIT_TOL) + AUDIT_TOL))
        if budget.budget_mode == 'rank':
            rank = matrix_rank(M)
            audit.checks.append(ConstraintCheck(f'{name}[{l}][{h}].rank', float(rank),
                                                float(ranks[name]), rank <= ranks[name]))
    w_norm = float(np.linalg.norm(params.w))
    audit.checks.append(ConstraintCheck('w.l2', w_norm, budget.B_w,
                                        w_norm <= budget.B_w * (1 + AUDIT_TOL) + AUDIT_TOL))
    if not audit.passed:
        logger.debug("budget audit failed: %s", [c.name for c in audit.failures()])
    return audit


def sample_params(spec: ArchSpec, budget: ParamBudget, rng, scale=1.0) -> TransformerParams:
    """Gaussian weights (sd ``scale``) projected into the budget."""
    gen = rng.generator()

    def block(rows, cols):
        return [[gen.normal(0.0, scale, size=(rows, cols)) for _ in range(spec.n_heads)]
                for _ in range(spec.n_layers)]

    raw = TransformerParams(W_QK=block(spec.d, spec.d), W_v=block(spec.d, spec.k),
                            W_c=block(spec.k, spec.d), w=gen.normal(0.0, scale, size=spec.d))
    return project_params(raw, budget, spec)


def output_bound(spec: ArchSpec, budget: ParamBudget) -> float:
    """Bound on |f(X)| for budget-respecting params and ||X||_2 <= B_X."""
    if spec.kind == 'ML':
        return budget.B_w
    head = budget.B_w * budget.B_c * budget.B_v * budget.L_sigma * budget.B_X
    return spec.n_heads * head
