"""Feature conditioning: projection network, batch self-attention, fusion.

The end product is the filtered feature matrix psi fed to the prompt side.
Self-attention treats the batch rows as the token set, so a single-sample
forward pass reduces the attention branch to a pass-through.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf as _erf_np

from . import autodiff as ad
from .autodiff import _safe_denominator
from .errors import DimensionError, ParameterError
from .spectral import ffb_apply, ffb_filter

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


def _fan_in_uniform(rng, shape):
    bound = 1.0 / math.sqrt(shape[0])
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ConditioningParams:
    """Learnable weights of the projection / attention / fusion stage."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    attn_q: list = field(default_factory=list)  # per head, d x (d/H)
    attn_k: list = field(default_factory=list)
    attn_v: list = field(default_factory=list)
    attn_out: np.ndarray = None  # d x d
    lambda_scale: float = 0.3
    n_heads: int = 4

    def __post_init__(self):
        d = self.w1.shape[0]
        if d % self.n_heads != 0:
            raise ParameterError(f"d={d} not divisible by {self.n_heads} heads")
        if not 0.0 <= self.lambda_scale <= 2.0:
            raise ParameterError(f"lambda_scale {self.lambda_scale} outside [0, 2]")

    @property
    def d(self):
        return self.w1.shape[0]

    @classmethod
    def init(cls, d, n_heads=4, lambda_scale=0.3, seed=0, attn_noise=0.01):
        """Fan-in uniform MLP weights; attention near identity + noise."""
        rng = np.random.default_rng(seed)
        dh = d // n_heads
        eye = np.eye(d)
        attn_q, attn_k, attn_v = [], [], []
        for h in range(n_heads):
            sl = eye[:, h * dh : (h + 1) * dh]
            attn_q.append(sl + rng.normal(0.0, attn_noise, size=(d, dh)))
            attn_k.append(sl + rng.normal(0.0, attn_noise, size=(d, dh)))
            attn_v.append(sl + rng.normal(0.0, attn_noise, size=(d, dh)))
        return cls(
            w1=_fan_in_uniform(rng, (d, d)),
            b1=np.zeros(d),
            w2=_fan_in_uniform(rng, (d, 2 * d)),
            b2=np.zeros(2 * d),
            w3=_fan_in_uniform(rng, (2 * d, d)),
            b3=np.zeros(d),
            attn_q=attn_q,
            attn_k=attn_k,
            attn_v=attn_v,
            attn_out=eye + rng.normal(0.0, attn_noise, size=(d, d)),
            lambda_scale=lambda_scale,
            n_heads=n_heads,
        )

    @classmethod
    def identity(cls, d, n_heads=1, lambda_scale=0.0):
        """Exact identity projections, zero MLP. Used for contract tests."""
        dh = d // n_heads
        eye = np.eye(d)
        slices = [eye[:, h * dh : (h + 1) * dh].copy() for h in range(n_heads)]
        return cls(
            w1=np.zeros((d, d)),
            b1=np.zeros(d),
            w2=np.zeros((d, 2 * d)),
            b2=np.zeros(2 * d),
            w3=np.zeros((2 * d, d)),
            b3=np.zeros(d),
            attn_q=[s.copy() for s in slices],
            attn_k=[s.copy() for s in slices],
            attn_v=[s.copy() for s in slices],
            attn_out=eye.copy(),
            lambda_scale=lambda_scale,
            n_heads=n_heads,
        )

    def leaf_arrays(self):
        out = {
            "cond.w1": self.w1,
            "cond.b1": self.b1,
            "cond.w2": self.w2,
            "cond.b2": self.b2,
            "cond.w3": self.w3,
            "cond.b3": self.b3,
            "cond.attn.out": self.attn_out,
        }
        for h in range(self.n_heads):
            out[f"cond.attn.h{h}.q"] = self.attn_q[h]
            out[f"cond.attn.h{h}.k"] = self.attn_k[h]
            out[f"cond.attn.h{h}.v"] = self.attn_v[h]
        return out

    def load_leaves(self, arrays):
        for name, value in self.leaf_arrays().items():
            value[...] = arrays[name]


def bind(tape, params, trainable=True):
    """Materialize parameter tensors on a tape (leaves when trainable)."""
    put = tape.leaf if trainable else (lambda v, name: tape.constant(v))
    return {name: put(value, name) for name, value in params.leaf_arrays().items()}


def projection_forward(X, params, bound):
    """ReLU-gated bottleneck-expansion MLP multiplied back onto the input."""
    if X.shape[1] != params.d:
        raise DimensionError(f"feature dim {X.shape[1]} != {params.d}")
    x1 = ad.add_rowvec(ad.matmul(X, bound["cond.w1"]), bound["cond.b1"])
    x2 = ad.add_rowvec(ad.matmul(ad.gelu(x1), bound["cond.w2"]), bound["cond.b2"])
    x3 = ad.add_rowvec(ad.matmul(ad.gelu(x2), bound["cond.w3"]), bound["cond.b3"])
    return ad.mul(ad.relu(x3), X)


def self_attention_forward(X, params, bound):
    """Scaled dot-product attention across batch rows, multi-head."""
    d = params.d
    if X.shape[1] != d:
        raise DimensionError(f"feature dim {X.shape[1]} != {d}")
    dh = d // params.n_heads
    inv_sqrt = 1.0 / math.sqrt(dh)
    heads = []
    for h in range(params.n_heads):
        q = ad.matmul(X, bound[f"cond.attn.h{h}.q"])
        k = ad.matmul(X, bound[f"cond.attn.h{h}.k"])
        v = ad.matmul(X, bound[f"cond.attn.h{h}.v"])
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), inv_sqrt)
        heads.append(ad.matmul(ad.softmax_rows(scores), v))
    merged = heads[0] if len(heads) == 1 else ad.concat_cols(heads)
    return ad.matmul(merged, bound["cond.attn.out"])


def fuse_features(X, x_projector, x_self, lambda_scale):
    """lambda-scaled elementwise product, divided back by X, plus residual."""
    if lambda_scale == 0.0:
        return X  # exact identity pass-through, no safe_div epsilon
    x_out = ad.scale(ad.mul(x_projector, x_self), lambda_scale)
    return ad.add(ad.safe_div(x_out, X), X)


def pif_pipeline(X, params, bound, spec):
    """Full conditioning chain ending in the spectral filter block."""
    if spec.d != params.d:
        raise DimensionError(f"filter length {spec.d} != feature dim {params.d}")
    x_proj = projection_forward(X, params, bound)
    x_self = self_attention_forward(X, params, bound)
    fused = fuse_features(X, x_proj, x_self, params.lambda_scale)
    return ffb_apply(fused, spec)


# ---------------------------------------------------------------------------
# tape-free path (evaluation, finite-difference probes)


def _gelu_np(z):
    return z * 0.5 * (1.0 + _erf_np(z * _INV_SQRT2))


def projection_numeric(X, params):
    x1 = X @ params.w1 + params.b1
    x2 = _gelu_np(x1) @ params.w2 + params.b2
    x3 = _gelu_np(x2) @ params.w3 + params.b3
    return np.maximum(x3, 0.0) * X


def self_attention_numeric(X, params):
    dh = params.d // params.n_heads
    inv_sqrt = 1.0 / math.sqrt(dh)
    heads = []
    for h in range(params.n_heads):
        q = X @ params.attn_q[h]
        k = X @ params.attn_k[h]
        v = X @ params.attn_v[h]
        scores = (q @ k.T) * inv_sqrt
        scores -= scores.max(axis=1, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(axis=1, keepdims=True)
        heads.append(w @ v)
    merged = heads[0] if len(heads) == 1 else np.concatenate(heads, axis=1)
    return merged @ params.attn_out


def pif_numeric(X, params, spec):
    """Numeric twin of pif_pipeline, identical arithmetic."""
    if spec.d != params.d:
        raise DimensionError(f"filter length {spec.d} != feature dim {params.d}")
    X = np.asarray(X, dtype=np.float64)
    if params.lambda_scale == 0.0:
        fused = X
    else:
        x_out = params.lambda_scale * (
            projection_numeric(X, params) * self_attention_numeric(X, params)
        )
        denom, _ = _safe_denominator(X)
        fused = x_out / denom + X
    return ffb_filter(fused, spec.mask)
