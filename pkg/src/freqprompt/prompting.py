"""Learnable context tokens, Meta-Net visual tokens, and a frozen text tower.

The text tower is a seeded two-layer transformer surrogate, not a pretrained
model. Its output projection doubles as a token-grounding map: the synthetic
data generator derives class prototypes from the same map, which is what
gives the desk-scale setup a zero-shot image/text alignment to start from
(standing in for what large-scale pretraining provides). The projection is
band-limited, so every text embedding lives in the low spectral band where
class semantics sit; high-frequency feature content can reach a similarity
score only through the prompt-conditioning path.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf as _erf_np

from . import autodiff as ad
from .errors import DimensionError, ParameterError, TemplateError
from .spectral import build_lowpass_mask, ffb_filter

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
# Frozen-tower geometry. Query/key scale controls how sharply attention
# inside the tower reacts to prompt content; value/output projections stay
# close to the identity so attention reweights token content without
# scrambling it.
ATTN_SCALE = 10.0
VO_GAIN = 1.0
VO_NOISE = 0.1
# Meta-Net init scale, split between the two layers. The product sets how
# much weight the visual tokens carry next to the unit-norm context rows;
# the split between layers fixes the operating point the optimizer starts
# from without changing the initial function (ReLU is positively
# homogeneous).
MN_SCALE = 10.0
MN_W1_SHARE = 8.0

DEFAULT_TEMPLATES = (
    "a photo of a {}",
    "satellite photo of a {}",
    "an aerial image of a {}",
    "remote sensing scene of a {}",
)
CONTEXT_INIT_TEMPLATE = "a photo of a"


def _hash_seed(*parts):
    digest = hashlib.blake2b(
        "\x1f".join(str(p) for p in parts).encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def token_vector(seed, token, e):
    """Deterministic unit embedding of a whitespace token."""
    rng = np.random.default_rng(_hash_seed("token", seed, token))
    v = rng.normal(size=e)
    return v / np.linalg.norm(v)


class FrozenTextEncoder:
    """Seeded transformer standing in for a pretrained text tower.

    Weights are drawn deterministically from the seed and never updated;
    gradients still flow through the encoder into prompt tokens.
    """

    def __init__(self, seed, e, d, n_layers=2, n_heads=4, mlp_mult=4):
        if e % n_heads != 0:
            raise ParameterError(f"width e={e} not divisible by {n_heads} heads")
        self.seed = seed
        self.e = e
        self.d = d
        self.n_layers = n_layers
        self.n_heads = n_heads
        rng = np.random.default_rng(_hash_seed("encoder", seed))
        s_attn = ATTN_SCALE / math.sqrt(e)
        s_vo = VO_NOISE / math.sqrt(e)
        s_m1 = 0.5 / math.sqrt(e)
        s_m2 = 0.5 / math.sqrt(mlp_mult * e)
        eye = np.eye(e)
        self.layers = []
        for _ in range(n_layers):
            self.layers.append(
                {
                    "wq": rng.normal(0.0, s_attn, size=(e, e)),
                    "wk": rng.normal(0.0, s_attn, size=(e, e)),
                    "wv": eye + rng.normal(0.0, s_vo, size=(e, e)),
                    "wo": VO_GAIN * eye + rng.normal(0.0, s_vo, size=(e, e)),
                    "wm1": rng.normal(0.0, s_m1, size=(e, mlp_mult * e)),
                    "bm1": np.zeros(mlp_mult * e),
                    "wm2": rng.normal(0.0, s_m2, size=(mlp_mult * e, e)),
                    "bm2": np.zeros(e),
                }
            )
        # Output projection e -> d; also the token-grounding map. Rows are
        # low-pass filtered so embeddings occupy the low quarter of the
        # centered spectrum, then rescaled to keep the pre-filter row norms.
        raw = rng.normal(0.0, 1.0 / math.sqrt(e), size=(e, d))
        band = build_lowpass_mask(d, max(2, d // 4)).mask
        filtered = ffb_filter(raw, band)
        self.band_mask = band
        self.out_proj = filtered * math.sqrt(d / band.sum())
        self._reference_cache = {}

    def fingerprint(self):
        h = hashlib.sha256()
        for layer in self.layers:
            for key in sorted(layer):
                h.update(np.ascontiguousarray(layer[key]).tobytes())
        h.update(np.ascontiguousarray(self.out_proj).tobytes())
        return h.hexdigest()

    def token_vector(self, token):
        return token_vector(self.seed, token, self.e)

    def grounding(self, token):
        """Unit d-vector the encoder associates with a vocabulary token."""
        g = self.token_vector(token) @ self.out_proj
        return g / np.linalg.norm(g)

    def _block_mask(self, n_seq, seq_len):
        """Additive attention mask confining each sequence to its own rows."""
        total = n_seq * seq_len
        mask = np.full((total, total), -1e30)
        for s in range(n_seq):
            lo = s * seq_len
            mask[lo : lo + seq_len, lo : lo + seq_len] = 0.0
        return mask

    def encode_stacked(self, tape, tokens, n_seq):
        """Encode n_seq equal-length sequences stacked row-wise.

        tokens: (n_seq * T, e) Tensor. Attention is restricted to each
        sequence's own block via an additive mask whose off-block entries
        underflow to exactly zero weight after the softmax, so the result
        matches per-sequence encoding bit for bit. Returns (n_seq, d) unit
        rows.
        """
        if tokens.ndim != 2 or tokens.shape[1] != self.e:
            raise DimensionError(f"token stack shape {tokens.shape}, width {self.e}")
        total = tokens.shape[0]
        if n_seq < 1 or total % n_seq != 0:
            raise DimensionError(f"{total} rows do not split into {n_seq} sequences")
        seq_len = total // n_seq
        dh = self.e // self.n_heads
        inv_sqrt = 1.0 / math.sqrt(dh)
        mask = (
            tape.constant(self._block_mask(n_seq, seq_len)) if n_seq > 1 else None
        )
        x = tokens
        for layer in self.layers:
            q = ad.matmul(x, tape.constant(layer["wq"]))
            k = ad.matmul(x, tape.constant(layer["wk"]))
            v = ad.matmul(x, tape.constant(layer["wv"]))
            heads = []
            for h in range(self.n_heads):
                lo, hi = h * dh, (h + 1) * dh
                qh = ad.slice_cols(q, lo, hi)
                kh = ad.slice_cols(k, lo, hi)
                vh = ad.slice_cols(v, lo, hi)
                scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), inv_sqrt)
                if mask is not None:
                    scores = ad.add(scores, mask)
                heads.append(ad.matmul(ad.softmax_rows(scores), vh))
            merged = heads[0] if len(heads) == 1 else ad.concat_cols(heads)
            x = ad.add(x, ad.matmul(merged, tape.constant(layer["wo"])))
            hidden = ad.gelu(
                ad.add_rowvec(
                    ad.matmul(x, tape.constant(layer["wm1"])),
                    tape.constant(layer["bm1"]),
                )
            )
            mlp = ad.add_rowvec(
                ad.matmul(hidden, tape.constant(layer["wm2"])),
                tape.constant(layer["bm2"]),
            )
            x = ad.add(x, mlp)
        if n_seq == 1:
            pooled = ad.mean_rows(x)
        else:
            pool = np.zeros((n_seq, total))
            for s in range(n_seq):
                pool[s, s * seq_len : (s + 1) * seq_len] = 1.0 / seq_len
            pooled = ad.matmul(tape.constant(pool), x)
        out = ad.matmul(pooled, tape.constant(self.out_proj))
        return ad.l2norm_rows(out)

    def encode(self, tape, tokens):
        """Run the frozen tower over a (T, e) token Tensor -> (1, d) unit row."""
        return self.encode_stacked(tape, tokens, 1)

    def encode_numeric(self, tokens):
        """Tape-free batch encode: (..., T, e) ndarray -> (..., d) unit rows.

        Matches encode() operation for operation (same max-subtracted
        softmax, same exact-erf GELU) so gradients checked against this
        path validate both implementations at once.
        """
        x = np.asarray(tokens, dtype=np.float64)
        if x.shape[-1] != self.e:
            raise DimensionError(f"token width {x.shape[-1]} != {self.e}")
        lead = x.shape[:-2]
        t = x.shape[-2]
        x = x.reshape(-1, t, self.e)
        s_count = x.shape[0]
        dh = self.e // self.n_heads
        inv_sqrt = 1.0 / math.sqrt(dh)
        for layer in self.layers:
            q = (x @ layer["wq"]).reshape(s_count, t, self.n_heads, dh)
            k = (x @ layer["wk"]).reshape(s_count, t, self.n_heads, dh)
            v = (x @ layer["wv"]).reshape(s_count, t, self.n_heads, dh)
            q = q.transpose(0, 2, 1, 3)
            k = k.transpose(0, 2, 1, 3)
            v = v.transpose(0, 2, 1, 3)
            scores = (q @ k.transpose(0, 1, 3, 2)) * inv_sqrt
            scores -= scores.max(axis=-1, keepdims=True)
            w = np.exp(scores)
            w /= w.sum(axis=-1, keepdims=True)
            merged = (w @ v).transpose(0, 2, 1, 3).reshape(s_count, t, self.e)
            x = x + merged @ layer["wo"]
            z = x @ layer["wm1"] + layer["bm1"]
            hidden = z * 0.5 * (1.0 + _erf_np(z * _INV_SQRT2))
            x = x + hidden @ layer["wm2"] + layer["bm2"]
        pooled = x.mean(axis=1)
        out = pooled @ self.out_proj
        out /= np.linalg.norm(out, axis=-1, keepdims=True)
        return out.reshape(*lead, self.d)

    def encode_words(self, tape, words):
        """Encode a plain token list (no learnable inputs)."""
        if not words:
            raise DimensionError("cannot encode an empty token list")
        rows = np.stack([self.token_vector(w) for w in words])
        return self.encode(tape, tape.constant(rows))


@dataclass
class PromptState:
    """Learnable context tokens plus per-position Meta-Net weights."""

    context: np.ndarray  # (M, e)
    meta: list = field(default_factory=list)  # per position: dict of arrays

    @property
    def m(self):
        return self.context.shape[0]

    @property
    def e(self):
        return self.context.shape[1]

    @classmethod
    def init(cls, d, e, m, seed, encoder=None, init_template=CONTEXT_INIT_TEMPLATE):
        if m < 1:
            raise ParameterError(f"context length M={m} must be >= 1")
        rng = np.random.default_rng(_hash_seed("prompt", seed))
        words = init_template.split()
        context = np.zeros((m, e))
        for i in range(m):
            if encoder is not None:
                context[i] = encoder.token_vector(words[i % len(words)])
        context += rng.normal(0.0, 0.02, size=(m, e))
        hidden = max(1, d // 16)
        meta = []
        for _ in range(m):
            meta.append(
                {
                    "w1": rng.uniform(-1, 1, size=(d, hidden))
                    * MN_W1_SHARE
                    / math.sqrt(d),
                    "b1": np.zeros(hidden),
                    "w2": rng.uniform(-1, 1, size=(hidden, e))
                    * (MN_SCALE / MN_W1_SHARE)
                    / math.sqrt(hidden),
                    "b2": np.zeros(e),
                }
            )
        return cls(context=context, meta=meta)

    def leaf_arrays(self):
        out = {"prompt.context": self.context}
        for i, layer in enumerate(self.meta):
            for key, value in layer.items():
                out[f"prompt.meta{i}.{key}"] = value
        return out

    def load_leaves(self, arrays):
        for name, value in self.leaf_arrays().items():
            value[...] = arrays[name]


def bind_prompt(tape, state, trainable=True):
    put = tape.leaf if trainable else (lambda v, name: tape.constant(v))
    return {name: put(value, name) for name, value in state.leaf_arrays().items()}


def metanet_forward(psi, state, bound):
    """Per-position visual tokens: list of M tensors shaped (B, e)."""
    tokens = []
    for i in range(state.m):
        h = ad.relu(
            ad.add_rowvec(
                ad.matmul(psi, bound[f"prompt.meta{i}.w1"]),
                bound[f"prompt.meta{i}.b1"],
            )
        )
        tokens.append(
            ad.add_rowvec(ad.matmul(h, bound[f"prompt.meta{i}.w2"]), bound[f"prompt.meta{i}.b2"])
        )
    return tokens


def metanet_forward_array(psi_rows, state):
    """Numeric Meta-Net: (B, d) -> (B, M, e)."""
    psi = np.asarray(psi_rows, dtype=np.float64)
    tokens = [
        np.maximum(psi @ m["w1"] + m["b1"], 0.0) @ m["w2"] + m["b2"]
        for m in state.meta
    ]
    return np.stack(tokens, axis=1)


def assemble_prompt(context, visual_tokens, sample_index, class_token):
    """Token sequence [c_m + v_m(sample), class] as an (M+1, e) Tensor."""
    rows = []
    for i, v in enumerate(visual_tokens):
        c_row = ad.slice_rows(context, i, i + 1)
        v_row = ad.slice_rows(v, sample_index, sample_index + 1)
        rows.append(ad.add(c_row, v_row))
    rows.append(class_token)
    return ad.concat_rows(rows)


def assemble_prompt_tokens(context, visual_tokens, class_embeddings):
    """Numeric bundle view: (B, C, M+1, e) from (M,e), (B,M,e), (C,e)."""
    b = visual_tokens.shape[0]
    c = class_embeddings.shape[0]
    m, e = context.shape
    out = np.empty((b, c, m + 1, e))
    out[:, :, :m, :] = (context[None, :, :] + visual_tokens)[:, None, :, :]
    out[:, :, m, :] = class_embeddings[None, :, :]
    return out


def tokenize_template(template, class_name):
    if "{}" not in template:
        raise TemplateError(f"template {template!r} has no '{{}}' class slot")
    return template.format(class_name).split()


def reference_prompt_embeddings(encoder, class_names, templates):
    """Encode every (template, class) pair: ndarray (Z, N_c, d), cached."""
    if not templates:
        raise ParameterError("need at least one prompt template")
    key = (tuple(class_names), tuple(templates))
    cached = encoder._reference_cache.get(key)
    if cached is not None:
        return cached
    out = np.empty((len(templates), len(class_names), encoder.d))
    for z, template in enumerate(templates):
        for i, name in enumerate(class_names):
            tape = ad.Tape()
            out[z, i] = encoder.encode_words(tape, tokenize_template(template, name)).data[0]
    out.setflags(write=False)
    encoder._reference_cache[key] = out
    return out
