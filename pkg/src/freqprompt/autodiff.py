"""Reverse-mode differentiation over a static DAG of dense arrays.

All values are float64 internally. Every primitive checks its output for
NaN/Inf and raises NumericError on violation, so a training run can never
silently continue with poisoned state.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError, NumericError, StateError

SAFE_DIV_EPS = 1e-8
_SAFE_DIV_DEAD = 1e-30
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as_f64(value):
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _check_finite(data, op_name):
    # A finite sum implies every element is finite; the full scan only runs
    # when the cheap test trips, to rule out overflow false alarms.
    if not math.isfinite(float(data.sum())) and not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by '{op_name}'")


class Tensor:
    """A node in the computation DAG. Immutable once created."""

    __slots__ = ("tape", "data", "parents")

    def __init__(self, tape, data, parents=()):
        self.tape = tape
        self.data = data
        # parents: tuple of (Tensor, vjp) where vjp maps the output
        # cotangent to this parent's cotangent contribution.
        self.parents = parents
        tape._register(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim


class Tape:
    """Records primitives in execution order; supports one backward pass."""

    def __init__(self):
        self._nodes = []
        self._leaves = {}
        self._used = False

    def _register(self, tensor):
        self._nodes.append(tensor)

    def leaf(self, value, name):
        if name in self._leaves:
            raise StateError(f"duplicate leaf name '{name}'")
        data = _as_f64(value)
        _check_finite(data, f"leaf:{name}")
        t = Tensor(self, data)
        self._leaves[name] = t
        return t

    def constant(self, value):
        data = _as_f64(value)
        _check_finite(data, "constant")
        return Tensor(self, data)

    @property
    def leaf_names(self):
        return tuple(self._leaves)

    def backward(self, loss):
        """Return {leaf name: gradient array} for a scalar loss node."""
        if loss.tape is not self:
            raise ContractError("loss node belongs to a different tape")
        if loss.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        if self._used:
            raise StateError("tape already consumed by a previous backward pass")
        self._used = True

        grads = {id(loss): np.ones_like(loss.data)}
        # Creation order is a topological order: walk it backwards.
        for node in reversed(self._nodes):
            g = grads.get(id(node))
            if g is None:
                continue
            for parent, vjp in node.parents:
                contrib = vjp(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib
        out = {}
        for name, t in self._leaves.items():
            out[name] = grads.get(id(t), np.zeros_like(t.data))
        return out


def _same_tape(*tensors):
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ContractError("operands belong to different tapes")
    return tape


def _make(tape, data, parents, op_name):
    _check_finite(data, op_name)
    return Tensor(tape, data, tuple(parents))


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} x {b.shape}")
    tape = _same_tape(a, b)
    data = a.data @ b.data
    return _make(
        tape,
        data,
        [(a, lambda g: g @ b.data.T), (b, lambda g: a.data.T @ g)],
        "matmul",
    )


def _binary(a, b, fwd, vjp_a, vjp_b, name):
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise DimensionError(f"{name} shapes {a.shape} vs {b.shape}")
        tape = _same_tape(a, b)
        bd = b.data
        data = fwd(a.data, bd)
        return _make(
            tape,
            data,
            [(a, lambda g: vjp_a(g, a.data, bd)), (b, lambda g: vjp_b(g, a.data, bd))],
            name,
        )
    bd = float(b)
    data = fwd(a.data, bd)
    return _make(a.tape, data, [(a, lambda g: vjp_a(g, a.data, bd))], name)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b):
    return _binary(
        a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g, "sub"
    )


def mul(a, b):
    return _binary(
        a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x, "mul"
    )


def _safe_denominator(b):
    b = np.asarray(b, dtype=np.float64)
    live = np.abs(b) > _SAFE_DIV_DEAD
    return np.where(live, b + SAFE_DIV_EPS * np.sign(b), SAFE_DIV_EPS), live


def safe_div(a, b):
    """a / (b + eps*sign(b)); dead denominators (|b| <= 1e-30) use eps alone.

    Never produces NaN/Inf for finite inputs; safe_div(0, 0) == 0.
    """

    def fwd(x, y):
        denom, _ = _safe_denominator(y)
        return x / denom

    def vjp_a(g, x, y):
        denom, _ = _safe_denominator(y)
        return g / denom

    def vjp_b(g, x, y):
        denom, live = _safe_denominator(y)
        return np.where(live, -g * x / (denom * denom), 0.0)

    return _binary(a, b, fwd, vjp_a, vjp_b, "safe_div")


def scale(a, s):
    s = float(s)
    return _make(a.tape, a.data * s, [(a, lambda g: g * s)], "scale")


def add_rowvec(a, v):
    """Add a length-n vector to every row of an m-by-n matrix."""
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rowvec shapes {a.shape} + {v.shape}")
    tape = _same_tape(a, v)
    return _make(
        tape,
        a.data + v.data[None, :],
        [(a, lambda g: g), (v, lambda g: g.sum(axis=0))],
        "add_rowvec",
    )


def relu(a):
    mask = a.data > 0.0
    return _make(a.tape, a.data * mask, [(a, lambda g: g * mask)], "relu")


def gelu(a):
    """Exact Gaussian-CDF GELU: z * Phi(z)."""
    z = a.data
    phi_cdf = 0.5 * (1.0 + erf(z * _INV_SQRT2))
    data = z * phi_cdf

    def vjp(g):
        pdf = np.exp(-0.5 * z * z) * _INV_SQRT2PI
        return g * (phi_cdf + z * pdf)

    return _make(a.tape, data, [(a, vjp)], "gelu")


def softmax_rows(a):
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows needs a matrix, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return s * (g - (g * s).sum(axis=1, keepdims=True))

    return _make(a.tape, s, [(a, vjp)], "softmax_rows")


def transpose(a):
    if a.ndim != 2:
        raise DimensionError("transpose needs a matrix")
    return _make(a.tape, a.data.T.copy(), [(a, lambda g: g.T)], "transpose")


def sum_all(a):
    shape = a.data.shape
    return _make(
        a.tape,
        np.asarray(a.data.sum()),
        [(a, lambda g: np.broadcast_to(g, shape).astype(np.float64))],
        "sum_all",
    )


def log_clamped(a, floor=1e-12):
    clamped = np.maximum(a.data, floor)
    live = a.data > floor
    return _make(
        a.tape,
        np.log(clamped),
        [(a, lambda g: np.where(live, g / clamped, 0.0))],
        "log_clamped",
    )


def l2norm_rows(a, eps=1e-30):
    """Normalize each row to unit L2 norm."""
    if a.ndim != 2:
        raise DimensionError("l2norm_rows needs a matrix")
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    norms = np.maximum(norms, eps)
    y = a.data / norms

    def vjp(g):
        return (g - y * (g * y).sum(axis=1, keepdims=True)) / norms

    return _make(a.tape, y, [(a, vjp)], "l2norm_rows")


def mean_rows(a):
    """Column means: (m, n) -> (1, n)."""
    if a.ndim != 2:
        raise DimensionError("mean_rows needs a matrix")
    m = a.shape[0]
    return _make(
        a.tape,
        a.data.mean(axis=0, keepdims=True),
        [(a, lambda g: np.repeat(g, m, axis=0) / m)],
        "mean_rows",
    )


def slice_rows(a, start, stop):
    if a.ndim != 2 or not (0 <= start < stop <= a.shape[0]):
        raise DimensionError(f"slice_rows [{start}:{stop}] of shape {a.shape}")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return out

    return _make(a.tape, a.data[start:stop].copy(), [(a, vjp)], "slice_rows")


def slice_cols(a, start, stop):
    if a.ndim != 2 or not (0 <= start < stop <= a.shape[1]):
        raise DimensionError(f"slice_cols [{start}:{stop}] of shape {a.shape}")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return out

    return _make(a.tape, a.data[:, start:stop].copy(), [(a, vjp)], "slice_cols")


def concat_rows(tensors):
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat_rows of nothing")
    cols = tensors[0].shape[1]
    for t in tensors:
        if t.ndim != 2 or t.shape[1] != cols:
            raise DimensionError("concat_rows column mismatch")
    tape = _same_tape(*tensors)
    data = np.concatenate([t.data for t in tensors], axis=0)

    parents = []
    offset = 0
    for t in tensors:
        lo, hi = offset, offset + t.shape[0]
        parents.append((t, lambda g, lo=lo, hi=hi: g[lo:hi]))
        offset = hi
    return _make(tape, data, parents, "concat_rows")


def concat_cols(tensors):
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat_cols of nothing")
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.ndim != 2 or t.shape[0] != rows:
            raise DimensionError("concat_cols row mismatch")
    tape = _same_tape(*tensors)
    data = np.concatenate([t.data for t in tensors], axis=1)

    parents = []
    offset = 0
    for t in tensors:
        lo, hi = offset, offset + t.shape[1]
        parents.append((t, lambda g, lo=lo, hi=hi: g[:, lo:hi]))
        offset = hi
    return _make(tape, data, parents, "concat_cols")


# ---------------------------------------------------------------------------
# gradient oracle


def finite_diff_check(f, params, h=1e-5):
    """Max relative error between analytic gradients and central differences.

    `f(params)` must return `(loss, grads)` where `grads` maps parameter
    names to arrays shaped like `params[name]` (or is a zero-argument
    callable producing that map, so perturbed evaluations can skip the
    backward pass). The numeric side only uses the loss value, keeping the
    oracle independent of the gradient path.
    """
    if h <= 0:
        raise ContractError("finite_diff_check needs h > 0")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = f(params)
    if callable(grads):
        grads = grads()
    max_err = 0.0
    for name, base in params.items():
        if name not in grads:
            raise ContractError(f"no analytic gradient for parameter '{name}'")
        analytic = np.asarray(grads[name], dtype=np.float64)
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(params)[0]
            flat[i] = orig - h
            down = f(params)[0]
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a))
            if err > max_err:
                max_err = err
    return max_err
