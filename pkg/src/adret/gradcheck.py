"""Finite-difference verification of every differentiable operation.

Assembles a named check for each primitive op, each learned-pooling stage,
the encoder chain, both batch losses, and the two composed
encode -> similarity -> loss pipelines, then runs them all against the
central-difference oracle. The CLI's gradcheck verb and the test suite both
call ``run_all``.

Discrete choices inside the losses (which negatives, which argmax) are not
differentiable, so the checks pin them: InfoNCE variants hold the negative
selection fixed, and triplet checks redraw their random inputs until every
hinge argument and every argmax gap clears the perturbation size by a wide
margin.
"""

from __future__ import annotations

import numpy as np

from . import pooling
from .encoders import EncoderParams, encode_forward, encode_vjp
from .objectives import (
    hard_triplet_loss,
    info_nce_loss,
    negatives_only_info_nce,
    select_negatives,
)
from .pooling import PoolParams, PoolingSpec
from .tensor import (
    CORE_OPS,
    DiffOp,
    GradCheckReport,
    add_row_bias_vjp,
    finite_diff_check,
    matmul_vjp,
)

_KINK_CLEARANCE = 1e-3  # required distance from hinge zeros and argmax ties


def _project_op() -> DiffOp:
    def forward(raw, w, b):
        return raw @ w + b[None, :]

    def vjp(inputs, out, grad):
        raw, w, _ = inputs
        d_m, d_b = add_row_bias_vjp(grad)
        d_raw, d_w = matmul_vjp(raw, w, d_m)
        return d_raw, d_w, d_b

    return DiffOp("project", forward, vjp)


def _token_pool_op() -> DiffOp:
    def forward(f, w_tok):
        return pooling._token_forward(f, w_tok)[0]

    def vjp(inputs, out, grad):
        _, _, cache = pooling._token_forward(*inputs)
        return pooling._token_vjp(cache, grad)

    return DiffOp("token_level_adpool", forward, vjp)


def _embedding_pool_op() -> DiffOp:
    def forward(f):
        return pooling._embedding_forward(f)[0]

    def vjp(inputs, out, grad):
        _, delta, f = pooling._embedding_forward(inputs[0])
        return (pooling._embedding_vjp((delta, f), grad),)

    return DiffOp("embedding_level_adpool", forward, vjp)


def _balance_op() -> DiffOp:
    def forward(t_tok, t_emb, w_bal):
        return pooling._balance_forward(t_tok, t_emb, w_bal)[0]

    def vjp(inputs, out, grad):
        _, _, cache = pooling._balance_forward(*inputs)
        return pooling._balance_vjp(cache, grad)

    return DiffOp("balance_combine", forward, vjp)


def _adpool_op() -> DiffOp:
    def forward(f, w_tok, w_bal):
        return pooling._adpool_forward(f, PoolParams(w_tok, w_bal))[0]

    def vjp(inputs, out, grad):
        f, w_tok, w_bal = inputs
        _, _, cache = pooling._adpool_forward(f, PoolParams(w_tok, w_bal))
        return pooling._adpool_vjp(cache, grad)

    return DiffOp("adpool", forward, vjp)


def _encode_op(spec: PoolingSpec) -> DiffOp:
    def params_of(w_proj, b_proj, w_tok, w_bal):
        return EncoderParams(w_proj=w_proj, b_proj=b_proj,
                             pool=PoolParams(w_tok, w_bal), spec=spec)

    def forward(f, w_proj, b_proj, w_tok, w_bal):
        return encode_forward(f, params_of(w_proj, b_proj, w_tok, w_bal))[0]

    def vjp(inputs, out, grad):
        _, cache = encode_forward(inputs[0], params_of(*inputs[1:]))
        grads, d_f = encode_vjp(cache, grad)
        return (d_f, grads["w_proj"], grads["b_proj"], grads["w_tok"],
                grads["w_bal"])

    return DiffOp(f"encode[{spec.method}]", forward, vjp)


def _triplet_op(margin: float) -> DiffOp:
    def forward(s):
        return np.float64(hard_triplet_loss(s, margin)[0])

    def vjp(inputs, out, grad):
        return (hard_triplet_loss(inputs[0], margin)[1] * float(grad),)

    return DiffOp("hard_triplet_loss", forward, vjp)


def _infonce_op(temperature: float, sel) -> DiffOp:
    def forward(s):
        return np.float64(info_nce_loss(s, sel, temperature)[0])

    def vjp(inputs, out, grad):
        return (info_nce_loss(inputs[0], sel, temperature)[1] * float(grad),)

    return DiffOp("info_nce_loss", forward, vjp)


def _negatives_only_op(temperature: float, sel) -> DiffOp:
    def forward(s):
        return np.float64(negatives_only_info_nce(s, sel, temperature)[0])

    def vjp(inputs, out, grad):
        return (negatives_only_info_nce(inputs[0], sel, temperature)[1]
                * float(grad),)

    return DiffOp("negatives_only_info_nce", forward, vjp)


def _triplet_safe(s: np.ndarray, margin: float) -> bool:
    """True when every hinge argument and argmax gap clears the kink zone."""
    b = s.shape[0]
    masked = np.where(np.eye(b, dtype=bool), -np.inf, s)
    row_sorted = -np.sort(-masked, axis=1)
    col_sorted = -np.sort(-masked.T, axis=1)
    gap = min(float((row_sorted[:, 0] - row_sorted[:, 1]).min()),
              float((col_sorted[:, 0] - col_sorted[:, 1]).min()))
    diag = np.diag(s)
    hinge = np.concatenate([margin - diag + row_sorted[:, 0],
                            margin - diag + col_sorted[:, 0]])
    return gap > _KINK_CLEARANCE and float(np.abs(hinge).min()) > _KINK_CLEARANCE


def _safe_triplet_matrix(rng: np.random.Generator, b: int, margin: float) -> np.ndarray:
    for _ in range(100):
        s = rng.uniform(-1.0, 1.0, size=(b, b))
        if _triplet_safe(s, margin):
            return s
    raise RuntimeError("could not draw a kink-free triplet test matrix")


def _pipeline_op(name: str, loss_of, texts, images, spec: PoolingSpec) -> DiffOp:
    """encode both sides -> similarity -> loss, as a function of all params.

    Inputs are the eight parameter tensors (text then visual, each
    w_proj, b_proj, w_tok, w_bal); the feature matrices are fixed data.
    ``loss_of(s)`` must return (value, d_loss/d_s) and be smooth at the
    evaluation point.
    """

    def run(inputs):
        tp = EncoderParams(w_proj=inputs[0], b_proj=inputs[1],
                           pool=PoolParams(inputs[2], inputs[3]), spec=spec)
        vp = EncoderParams(w_proj=inputs[4], b_proj=inputs[5],
                           pool=PoolParams(inputs[6], inputs[7]), spec=spec)
        t_pairs = [encode_forward(f, tp) for f in texts]
        v_pairs = [encode_forward(f, vp) for f in images]
        t_mat = np.stack([e for e, _ in t_pairs])
        v_mat = np.stack([e for e, _ in v_pairs])
        return t_mat, v_mat, [c for _, c in t_pairs], [c for _, c in v_pairs]

    def forward(*inputs):
        t_mat, v_mat, _, _ = run(inputs)
        return np.float64(loss_of(t_mat @ v_mat.T)[0])

    def vjp(inputs, out, grad):
        t_mat, v_mat, t_caches, v_caches = run(inputs)
        _, d_s = loss_of(t_mat @ v_mat.T)
        d_s = d_s * float(grad)
        d_t = d_s @ v_mat
        d_v = d_s.T @ t_mat
        acc = [np.zeros_like(x) for x in inputs]
        keys = ("w_proj", "b_proj", "w_tok", "w_bal")
        for i, cache in enumerate(t_caches):
            g, _ = encode_vjp(cache, d_t[i])
            for j, key in enumerate(keys):
                acc[j] += g[key]
        for i, cache in enumerate(v_caches):
            g, _ = encode_vjp(cache, d_v[i])
            for j, key in enumerate(keys):
                acc[4 + j] += g[key]
        return acc

    return DiffOp(name, forward, vjp)


def _pipeline_similarity(params, texts, images, spec):
    tp = EncoderParams(w_proj=params[0], b_proj=params[1],
                       pool=PoolParams(params[2], params[3]), spec=spec)
    vp = EncoderParams(w_proj=params[4], b_proj=params[5],
                       pool=PoolParams(params[6], params[7]), spec=spec)
    t_mat = np.stack([encode_forward(f, tp)[0] for f in texts])
    v_mat = np.stack([encode_forward(f, vp)[0] for f in images])
    return t_mat @ v_mat.T


def build_checks(rng: np.random.Generator) -> list[tuple[DiffOp, list[np.ndarray]]]:
    """One (op, inputs) pair per differentiable surface, freshly randomized."""
    checks: list[tuple[DiffOp, list[np.ndarray]]] = []
    normal = rng.standard_normal

    def away_from_zero(shape):
        # keep row norms comfortably above the degeneracy threshold
        return normal(shape) + 2.0 * np.sign(normal(shape))

    core_inputs = {
        "matmul": [normal((3, 4)), normal((4, 2))],
        "add_row_bias": [normal((3, 4)), normal(4)],
        "softmax_columns": [normal((4, 3))],
        "softmax_vector": [normal(5)],
        "sort_desc_per_column": [normal((5, 3))],
        "l2_normalize_rows": [away_from_zero((4, 3))],
        "cosine_sim_matrix": [away_from_zero((4, 3)), away_from_zero((5, 3))],
    }
    for op in CORE_OPS:
        checks.append((op, core_inputs[op.name]))

    checks.append((_project_op(), [normal((4, 3)), normal((3, 5)), normal(5)]))
    checks.append((_token_pool_op(), [normal((5, 4)), normal((4, 1))]))
    checks.append((_embedding_pool_op(), [normal((5, 4))]))
    checks.append((_balance_op(), [normal(4), normal(4), normal((4, 1))]))
    checks.append((_adpool_op(), [normal((5, 4)), normal((4, 1)), normal((4, 1))]))

    spec = PoolingSpec("adpool")
    checks.append((_encode_op(spec),
                   [normal((4, 3)), normal((3, 5)), normal(5),
                    normal((5, 1)), normal((5, 1))]))

    margin = 0.2
    checks.append((_triplet_op(margin), [_safe_triplet_matrix(rng, 5, margin)]))

    s = rng.uniform(-1.0, 1.0, size=(6, 6))
    checks.append((_infonce_op(0.5, select_negatives(s, 3)), [s]))
    s2 = rng.uniform(-1.0, 1.0, size=(6, 6))
    checks.append((_negatives_only_op(0.5, select_negatives(s2, 3)), [s2]))

    # composed pipelines over a tiny batch of variable-length instances
    b, d_in, d = 3, 4, 5
    texts = [normal((int(rng.integers(2, 5)), d_in)) for _ in range(b)]
    images = [normal((int(rng.integers(2, 5)), d_in)) for _ in range(b)]

    def draw_params():
        return [normal((d_in, d)), normal(d), 0.5 * normal((d, 1)),
                0.5 * normal((d, 1)), normal((d_in, d)), normal(d),
                0.5 * normal((d, 1)), 0.5 * normal((d, 1))]

    params = draw_params()
    frozen_sel = select_negatives(_pipeline_similarity(params, texts, images, spec), 2)
    checks.append((_pipeline_op("pipeline[encode->infonce]",
                                lambda sm: info_nce_loss(sm, frozen_sel, 0.5),
                                texts, images, spec),
                   [p.copy() for p in params]))

    for _ in range(100):
        tri_params = draw_params()
        if _triplet_safe(_pipeline_similarity(tri_params, texts, images, spec),
                         margin):
            break
    else:
        raise RuntimeError("could not draw kink-free pipeline parameters")
    checks.append((_pipeline_op("pipeline[encode->hard_triplet]",
                                lambda sm: hard_triplet_loss(sm, margin),
                                texts, images, spec),
                   tri_params))
    return checks


def run_all(seed: int = 0, tolerance: float = 1e-4) -> list[GradCheckReport]:
    rng = np.random.default_rng([seed, 0x6AD])
    reports = []
    for op, inputs in build_checks(rng):
        reports.append(finite_diff_check(op, inputs, tolerance=tolerance,
                                         rng=np.random.default_rng([seed, 1])))
    return reports
