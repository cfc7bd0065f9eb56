"""Similarity head, training losses, and the end-to-end model forward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import conditioning, prompting
from .errors import ContractError, DimensionError, ParameterError

PROB_FLOOR = 1e-12
NORM_TOL = 1e-4


@dataclass
class LossConfig:
    tau: float = 0.01
    rpa_weight: float = 0.5  # weight on the prompt-alignment term
    variant_count: int = 4
    seen_class_count: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ParameterError(f"temperature tau={self.tau} must be > 0")
        if self.rpa_weight < 0:
            raise ParameterError(f"rpa_weight {self.rpa_weight} must be >= 0")
        if self.variant_count < 1:
            raise ParameterError("need at least one prompt variant")


def _check_unit_rows(rows, what):
    norms = np.linalg.norm(rows, axis=-1)
    worst = float(np.abs(norms - 1.0).max())
    if worst > NORM_TOL:
        raise ContractError(f"{what} not L2-normalized (max deviation {worst:.2e})")


def class_posterior(image_feat, text_feats, tau):
    """Row-softmax of cosine similarities / tau. Numeric contract path.

    image_feat: (B, d) unit rows; text_feats: (B, C, d) unit vectors.
    """
    if tau <= 0:
        raise ParameterError("tau must be > 0")
    image_feat = np.asarray(image_feat, dtype=np.float64)
    text_feats = np.asarray(text_feats, dtype=np.float64)
    if image_feat.ndim != 2 or text_feats.ndim != 3 or (
        image_feat.shape[0] != text_feats.shape[0]
        or image_feat.shape[1] != text_feats.shape[2]
    ):
        raise DimensionError(
            f"posterior shapes {image_feat.shape} vs {text_feats.shape}"
        )
    _check_unit_rows(image_feat, "image features")
    _check_unit_rows(text_feats, "text features")
    sims = np.einsum("bd,bcd->bc", image_feat, text_feats) / tau
    shifted = sims - sims.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_ce(posterior, labels):
    """Mean negative log-probability of the true class (tape Tensor in/out)."""
    b, c = posterior.shape
    sums = posterior.data.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise ContractError("posterior rows do not sum to 1")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise DimensionError(f"labels shape {labels.shape} vs batch {b}")
    if labels.min() < 0 or labels.max() >= c:
        raise IndexError(f"label outside [0, {c})")
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels] = 1.0
    picked = ad.mul(ad.log_clamped(posterior, PROB_FLOOR), posterior.tape.constant(onehot))
    return ad.scale(ad.sum_all(picked), -1.0 / b)


def loss_rpa(learned, reference):
    """Mean squared distance to reference embeddings over variants and classes.

    learned: (N_c, d) Tensor; reference: (Z, N_c, d) array.
    """
    reference = np.asarray(reference, dtype=np.float64)
    if reference.ndim != 3 or reference.shape[1:] != tuple(learned.shape):
        raise DimensionError(
            f"reference shape {reference.shape} vs learned {learned.shape}"
        )
    z, n_c, _ = reference.shape
    tape = learned.tape
    total = None
    for zi in range(z):
        diff = ad.sub(learned, tape.constant(reference[zi]))
        sq = ad.sum_all(ad.mul(diff, diff))
        total = sq if total is None else ad.add(total, sq)
    return ad.scale(total, 1.0 / (z * n_c))


def loss_total(l_ce, l_rpa, rpa_weight):
    if l_rpa is None or rpa_weight == 0.0:
        return l_ce
    return ad.add(l_ce, ad.scale(l_rpa, rpa_weight))


def predict(posterior_row):
    """Argmax class index; ties resolve to the lowest index."""
    row = np.asarray(posterior_row, dtype=np.float64)
    if row.ndim != 1 or row.size == 0:
        raise ContractError("predict needs a nonempty similarity row")
    return int(np.argmax(row))


@dataclass
class ForwardResult:
    tape: ad.Tape
    posterior: ad.Tensor  # (B, C)
    psi: ad.Tensor  # (B, d)
    learned_class_embeddings: ad.Tensor = None  # (C, d), batch-mean conditioning


class Model:
    """Bundles all learnable state plus the frozen encoder and filter."""

    def __init__(self, cond, prompt, encoder, filter_spec, class_names, tau=0.01):
        if tau <= 0:
            raise ParameterError("tau must be > 0")
        self.cond = cond
        self.prompt = prompt
        self.encoder = encoder
        self.filter_spec = filter_spec
        self.class_names = list(class_names)
        self.tau = tau

    def leaf_arrays(self):
        out = dict(self.cond.leaf_arrays())
        out.update(self.prompt.leaf_arrays())
        return out

    def load_leaves(self, arrays):
        self.cond.load_leaves(arrays)
        self.prompt.load_leaves(arrays)

    def class_token(self, class_id):
        return self.encoder.token_vector(self.class_names[class_id])

    def forward(self, features, class_ids, trainable=True, want_alignment=False,
                context_override=None, tape=None):
        """Run conditioning -> prompts -> frozen encoding -> posterior.

        features: (B, d) unit rows; class_ids: candidate class index list.
        `context_override` replaces the learned context tokens at evaluation
        time (template-substitution studies); the Meta-Net stays active.
        """
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise DimensionError("features must be (B, d)")
        _check_unit_rows(features, "image features")
        if not class_ids:
            raise ParameterError("empty candidate class set")
        tape = tape or ad.Tape()
        bound_c = conditioning.bind(tape, self.cond, trainable=trainable)
        bound_p = prompting.bind_prompt(tape, self.prompt, trainable=trainable)
        context = bound_p["prompt.context"]
        if context_override is not None:
            context = tape.constant(context_override)

        X = tape.constant(features)
        psi = conditioning.pif_pipeline(X, self.cond, bound_c, self.filter_spec)
        v_tokens = prompting.metanet_forward(psi, self.prompt, bound_p)

        b = features.shape[0]
        c = len(class_ids)
        class_consts = [
            tape.constant(self.class_token(cid)[None, :]) for cid in class_ids
        ]
        # One (M, e) prompt prefix per sample; every sequence is the prefix
        # plus one class token, so the whole bundle set encodes in a single
        # stacked call.
        prefixes = []
        for bi in range(b):
            vb = ad.concat_rows([ad.slice_rows(v, bi, bi + 1) for v in v_tokens])
            prefixes.append(ad.add(context, vb))
        pieces = []
        for bi in range(b):
            for ct in class_consts:
                pieces.append(prefixes[bi])
                pieces.append(ct)
        n_seq = b * c
        if want_alignment:
            v_mean = ad.concat_rows([ad.mean_rows(v) for v in v_tokens])
            prefix_mean = ad.add(context, v_mean)
            for ct in class_consts:
                pieces.append(prefix_mean)
                pieces.append(ct)
            n_seq += c
        stack = ad.concat_rows(pieces)
        encoded = self.encoder.encode_stacked(tape, stack, n_seq)

        sim_rows = []
        for bi in range(b):
            t_mat = ad.slice_rows(encoded, bi * c, (bi + 1) * c)
            x_row = tape.constant(features[bi : bi + 1])
            sim_rows.append(ad.matmul(x_row, ad.transpose(t_mat)))
        sims = ad.concat_rows(sim_rows) if b > 1 else sim_rows[0]
        posterior = ad.softmax_rows(ad.scale(sims, 1.0 / self.tau))

        learned = None
        if want_alignment:
            learned = ad.slice_rows(encoded, b * c, b * c + c)
        return ForwardResult(
            tape=tape, posterior=posterior, psi=psi, learned_class_embeddings=learned
        )

    def forward_numeric(self, features, class_ids, context_override=None,
                        want_alignment=False):
        """Tape-free forward pass: (posterior, psi, learned embeddings).

        Same arithmetic as forward(); used for evaluation and as the loss
        oracle inside finite-difference audits.
        """
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise DimensionError("features must be (B, d)")
        _check_unit_rows(features, "image features")
        if not class_ids:
            raise ParameterError("empty candidate class set")
        psi = conditioning.pif_numeric(features, self.cond, self.filter_spec)
        v = prompting.metanet_forward_array(psi, self.prompt)
        ctx = self.prompt.context if context_override is None else np.asarray(
            context_override, dtype=np.float64
        )
        class_emb = np.stack([self.class_token(cid) for cid in class_ids])
        bundles = prompting.assemble_prompt_tokens(ctx, v, class_emb)
        text = self.encoder.encode_numeric(bundles)
        posterior = class_posterior(features, text, self.tau)
        learned = None
        if want_alignment:
            v_mean = v.mean(axis=0, keepdims=True)
            mean_bundle = prompting.assemble_prompt_tokens(ctx, v_mean, class_emb)
            learned = self.encoder.encode_numeric(mean_bundle)[0]
        return posterior, psi, learned


def loss_value_numeric(model, features, labels, class_ids, reference, rpa_weight):
    """Scalar total loss via the tape-free path (finite-difference oracle)."""
    labels = np.asarray(labels, dtype=np.int64)
    posterior, _, learned = model.forward_numeric(
        features, class_ids, want_alignment=rpa_weight > 0.0
    )
    picked = np.maximum(posterior[np.arange(len(labels)), labels], PROB_FLOOR)
    total = -np.log(picked).mean()
    if rpa_weight > 0.0:
        reference = np.asarray(reference, dtype=np.float64)
        z = reference.shape[0]
        diff = learned[None, :, :] - reference
        total += rpa_weight * float((diff * diff).sum()) / (z * learned.shape[0])
    return float(total)
