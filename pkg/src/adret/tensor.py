"""Dense float64 matrix operations with hand-written vector-Jacobian products.

Every operation used by the trainable pipeline comes in two parts: a pure
forward function and a matching ``*_vjp`` that maps an upstream gradient back
onto the inputs. There is no graph or tape; downstream modules chain the VJPs
by hand in reverse order. ``finite_diff_check`` is the independent oracle used
to verify every analytic gradient against central finite differences.

Conventions:
  - matrices are 2-D C-order float64 ndarrays, rows x cols
  - sorting is descending, ties broken by original row index (stable)
  - softmax is stabilized by max subtraction
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateVectorError, DimensionError, EvaluationError

Array = np.ndarray

ZERO_NORM_EPS = 1e-12


def as_matrix(x, name: str = "matrix") -> Array:
    """Coerce to a finite 2-D float64 array, raising on anything else."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise EvaluationError(f"{name} contains non-finite values")
    return np.ascontiguousarray(m)


def as_vector(x, name: str = "vector") -> Array:
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise EvaluationError(f"{name} contains non-finite values")
    return v


# ---------------------------------------------------------------------------
# forward / vjp pairs
# ---------------------------------------------------------------------------

def matmul(a: Array, b: Array) -> Array:
    a = as_matrix(a, "matmul lhs")
    b = as_matrix(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    return a @ b


def matmul_vjp(a: Array, b: Array, grad: Array) -> tuple[Array, Array]:
    return grad @ b.T, a.T @ grad


def add_row_bias(m: Array, bias: Array) -> Array:
    """Add a row vector to every row of ``m``."""
    m = as_matrix(m, "add_row_bias input")
    bias = as_vector(bias, "bias")
    if bias.shape[0] != m.shape[1]:
        raise DimensionError(
            f"add_row_bias: bias length {bias.shape[0]} != cols {m.shape[1]}")
    return m + bias[None, :]


def add_row_bias_vjp(grad: Array) -> tuple[Array, Array]:
    return grad, grad.sum(axis=0)


def softmax_columns(m: Array) -> Array:
    """Column-wise softmax, stabilized by subtracting each column's max."""
    m = as_matrix(m, "softmax input")
    if m.size == 0:
        raise ValueError("softmax_columns: empty matrix")
    z = m - m.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def softmax_columns_vjp(out: Array, grad: Array) -> Array:
    # d/dm of sum(g * softmax(m)) = s * (g - sum_i g_i s_i), per column
    return out * (grad - (grad * out).sum(axis=0, keepdims=True))


def softmax_vector(v: Array) -> Array:
    v = as_vector(v, "softmax input")
    if v.size == 0:
        raise ValueError("softmax_vector: empty vector")
    z = v - v.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_vector_vjp(out: Array, grad: Array) -> Array:
    return out * (grad - float(grad @ out))


def sort_desc_per_column(m: Array) -> tuple[Array, Array]:
    """Sort each column descending.

    Returns (sorted matrix, permutation); ``perm[i, j]`` is the original row
    index of the value now sitting at row i of column j. Ties keep their
    original order, so the permutation is deterministic.
    """
    m = as_matrix(m, "sort input")
    if m.size == 0:
        raise ValueError("sort_desc_per_column: empty matrix")
    perm = np.argsort(-m, axis=0, kind="stable")
    return np.take_along_axis(m, perm, axis=0), perm


def sort_desc_per_column_vjp(perm: Array, grad: Array) -> Array:
    """Scatter the upstream gradient back through the recorded permutation."""
    out = np.zeros_like(grad)
    np.put_along_axis(out, perm, grad, axis=0)
    return out


def unsort_per_column(sorted_m: Array, perm: Array) -> Array:
    """Invert sort_desc_per_column exactly."""
    out = np.empty_like(sorted_m)
    np.put_along_axis(out, perm, sorted_m, axis=0)
    return out


def l2_normalize_rows(m: Array) -> Array:
    m = as_matrix(m, "l2_normalize input")
    if m.size == 0:
        raise ValueError("l2_normalize_rows: empty matrix")
    norms = np.sqrt((m * m).sum(axis=1))
    if norms.min() < ZERO_NORM_EPS:
        row = int(norms.argmin())
        raise DegenerateVectorError(
            f"row {row} has norm {norms[row]:.3e} < {ZERO_NORM_EPS}; "
            "cannot normalize (encoder collapse?)")
    return m / norms[:, None]


def l2_normalize_rows_vjp(m: Array, out: Array, grad: Array) -> Array:
    norms = np.sqrt((m * m).sum(axis=1, keepdims=True))
    inner = (grad * out).sum(axis=1, keepdims=True)
    return (grad - out * inner) / norms


def cosine_sim_matrix(t: Array, v: Array) -> Array:
    """Pairwise cosine similarities; rows of the result index rows of ``t``."""
    t = as_matrix(t, "similarity lhs")
    v = as_matrix(v, "similarity rhs")
    if t.shape[1] != v.shape[1]:
        raise DimensionError(
            f"cosine_sim_matrix: column counts differ, {t.shape} vs {v.shape}")
    return l2_normalize_rows(t) @ l2_normalize_rows(v).T


def cosine_sim_matrix_vjp(t: Array, v: Array, grad: Array) -> tuple[Array, Array]:
    tn = l2_normalize_rows(t)
    vn = l2_normalize_rows(v)
    dtn = grad @ vn
    dvn = grad.T @ tn
    return (l2_normalize_rows_vjp(t, tn, dtn),
            l2_normalize_rows_vjp(v, vn, dvn))


# ---------------------------------------------------------------------------
# differentiable-operation contract and the finite-difference oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffOp:
    """A forward function paired with its vector-Jacobian product.

    ``forward(*inputs)`` returns an ndarray (any shape, scalars included).
    ``vjp(inputs, output, grad)`` returns one gradient per input, each with
    the shape of the corresponding input, and must be linear in ``grad``.
    """

    name: str
    forward: Callable[..., Array]
    vjp: Callable[[Sequence[Array], Array, Array], Sequence[Array]]


@dataclass(frozen=True)
class GradCheckReport:
    op_name: str
    max_rel_err: float
    tolerance: float
    passed: bool

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"{status}  {self.op_name}: max rel err {self.max_rel_err:.3e} "
                f"(tol {self.tolerance:.1e})")


def finite_diff_check(op: DiffOp, inputs: Sequence[Array],
                      tolerance: float = 1e-4, h: float = 1e-5,
                      rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare ``op.vjp`` against central finite differences.

    Perturbs every entry of every input by +-h and differentiates the scalar
    <g, forward(x)> for a random upstream gradient g. The reported error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1)``, maximized over
    all entries (the unit floor keeps near-zero gradients from inflating a
    ratio finite differences cannot resolve anyway).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    work = [np.array(x, dtype=np.float64) for x in inputs]
    out = np.asarray(op.forward(*work), dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"{op.name}: forward produced non-finite values")
    g = rng.standard_normal(out.shape)

    analytic = op.vjp(work, out, g)
    if len(analytic) != len(work):
        raise EvaluationError(f"{op.name}: vjp returned {len(analytic)} grads "
                              f"for {len(work)} inputs")

    max_err = 0.0
    for k, x in enumerate(work):
        a = np.asarray(analytic[k], dtype=np.float64)
        if a.shape != x.shape:
            raise EvaluationError(
                f"{op.name}: vjp grad {k} has shape {a.shape}, input {x.shape}")
        numeric = np.empty_like(x)
        flat = x.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(np.sum(g * op.forward(*work)))
            flat[i] = orig - h
            fm = float(np.sum(g * op.forward(*work)))
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2.0 * h)
        if x.size:
            denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1.0)
            max_err = max(max_err, float((np.abs(a - numeric) / denom).max()))
    return GradCheckReport(op.name, max_err, tolerance, max_err <= tolerance)


# DiffOp wrappers for the primitive operations, mainly consumed by the
# gradient-check suite. Downstream code calls the plain functions directly.

def _matmul_op_vjp(inputs, out, grad):
    return matmul_vjp(inputs[0], inputs[1], grad)


def _add_row_bias_op_vjp(inputs, out, grad):
    return add_row_bias_vjp(grad)


def _softmax_columns_op_vjp(inputs, out, grad):
    return (softmax_columns_vjp(out, grad),)


def _softmax_vector_op_vjp(inputs, out, grad):
    return (softmax_vector_vjp(out, grad),)


def _sort_op_forward(m):
    return sort_desc_per_column(m)[0]


def _sort_op_vjp(inputs, out, grad):
    perm = sort_desc_per_column(inputs[0])[1]
    return (sort_desc_per_column_vjp(perm, grad),)


def _l2_op_vjp(inputs, out, grad):
    return (l2_normalize_rows_vjp(inputs[0], out, grad),)


def _cosine_op_vjp(inputs, out, grad):
    return cosine_sim_matrix_vjp(inputs[0], inputs[1], grad)


MATMUL_OP = DiffOp("matmul", matmul, _matmul_op_vjp)
ADD_ROW_BIAS_OP = DiffOp("add_row_bias", add_row_bias, _add_row_bias_op_vjp)
SOFTMAX_COLUMNS_OP = DiffOp("softmax_columns", softmax_columns,
                            _softmax_columns_op_vjp)
SOFTMAX_VECTOR_OP = DiffOp("softmax_vector", softmax_vector,
                           _softmax_vector_op_vjp)
SORT_DESC_OP = DiffOp("sort_desc_per_column", _sort_op_forward, _sort_op_vjp)
L2_NORMALIZE_OP = DiffOp("l2_normalize_rows", l2_normalize_rows, _l2_op_vjp)
COSINE_SIM_OP = DiffOp("cosine_sim_matrix", cosine_sim_matrix, _cosine_op_vjp)

CORE_OPS = (MATMUL_OP, ADD_ROW_BIAS_OP, SOFTMAX_COLUMNS_OP, SOFTMAX_VECTOR_OP,
            SORT_DESC_OP, L2_NORMALIZE_OP, COSINE_SIM_OP)
