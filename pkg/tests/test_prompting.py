"""Context tokens, Meta-Net, prompt assembly, and the frozen text tower."""
import numpy as np
import pytest

from freqprompt import autodiff as ad
from freqprompt import prompting as pr
from freqprompt.errors import DimensionError, ParameterError, TemplateError


def _encoder(seed=0, e=16, d=16):
    return pr.FrozenTextEncoder(seed, e=e, d=d)


def _state(d=16, e=16, m=4, seed=0, encoder=None):
    return pr.PromptState.init(d, e, m, seed, encoder=encoder)


def test_metanet_zero_weights_zero_tokens():
    state = _state()
    for layer in state.meta:
        for v in layer.values():
            v[...] = 0.0
    psi = np.random.default_rng(0).normal(size=(3, 16))
    out = pr.metanet_forward_array(psi, state)
    np.testing.assert_array_equal(out, 0.0)


def test_metanet_output_shape():
    state = _state(d=16, e=32, m=4)
    psi = np.random.default_rng(1).normal(size=(4, 16))
    assert pr.metanet_forward_array(psi, state).shape == (4, 4, 32)


def test_metanet_hand_weights_scalar_oracle():
    state = _state(d=16, e=4, m=1)
    layer = state.meta[0]
    rng = np.random.default_rng(2)
    layer["w1"][...] = rng.normal(size=layer["w1"].shape)  # hidden width 1
    layer["b1"][...] = 0.3
    layer["w2"][...] = rng.normal(size=layer["w2"].shape)
    layer["b2"][...] = -0.1
    psi = rng.normal(size=(2, 16))
    # scalar-loop oracle for the two-layer map
    expect = np.zeros((2, 1, 4))
    for b in range(2):
        h = max(sum(psi[b, i] * layer["w1"][i, 0] for i in range(16)) + 0.3, 0.0)
        for j in range(4):
            expect[b, 0, j] = h * layer["w2"][0, j] - 0.1
    np.testing.assert_allclose(pr.metanet_forward_array(psi, state), expect, atol=1e-12)


def test_metanet_tape_and_numeric_paths_agree():
    enc = _encoder()
    state = _state(encoder=enc)
    psi = np.random.default_rng(3).normal(size=(3, 16))
    t = ad.Tape()
    bound = pr.bind_prompt(t, state, trainable=False)
    tokens = pr.metanet_forward(t.constant(psi), state, bound)
    stacked = np.stack([v.data for v in tokens], axis=1)
    np.testing.assert_allclose(stacked, pr.metanet_forward_array(psi, state), atol=1e-12)


def test_metanet_hidden_width_floor():
    state = pr.PromptState.init(8, 8, 2, seed=0)
    assert state.meta[0]["w1"].shape == (8, 1)


def test_context_length_validated():
    with pytest.raises(ParameterError):
        pr.PromptState.init(16, 16, 0, seed=0)


def test_assemble_static_prompt_when_tokens_zero():
    state = _state(m=4)
    ctx = state.context
    v = np.zeros((2, 4, 16))
    cls = np.random.default_rng(4).normal(size=(3, 16))
    bundles = pr.assemble_prompt_tokens(ctx, v, cls)
    assert bundles.shape == (2, 3, 5, 16)
    for b in range(2):
        for c in range(3):
            np.testing.assert_array_equal(bundles[b, c, :4], ctx)
            np.testing.assert_array_equal(bundles[b, c, 4], cls[c])


def test_assemble_two_samples_differ_only_through_tokens():
    state = _state(m=2)
    rng = np.random.default_rng(5)
    v = rng.normal(size=(2, 2, 16))
    cls = rng.normal(size=(1, 16))
    bundles = pr.assemble_prompt_tokens(state.context, v, cls)
    diff = bundles[0, 0] - bundles[1, 0]
    np.testing.assert_allclose(diff[:2], v[0] - v[1], atol=1e-12)
    np.testing.assert_array_equal(diff[2], 0.0)


def test_assemble_positions_are_context_plus_tokens():
    state = _state(m=4)
    rng = np.random.default_rng(6)
    v = rng.normal(size=(1, 4, 16))
    cls = rng.normal(size=(1, 16))
    bundles = pr.assemble_prompt_tokens(state.context, v, cls)
    for m in range(4):
        np.testing.assert_allclose(bundles[0, 0, m], state.context[m] + v[0, m], atol=1e-12)


def test_assemble_additivity():
    state = _state(m=3)
    rng = np.random.default_rng(7)
    v = rng.normal(size=(1, 3, 16))
    cls = rng.normal(size=(1, 16))
    one = pr.assemble_prompt_tokens(state.context, v, cls)
    two = pr.assemble_prompt_tokens(state.context, 2.0 * v, cls)
    np.testing.assert_allclose(
        two[0, 0, :3] - state.context, 2.0 * (one[0, 0, :3] - state.context), atol=1e-12
    )


def test_encoder_deterministic():
    rng = np.random.default_rng(8)
    tokens = rng.normal(size=(5, 16))
    a = _encoder().encode_numeric(tokens)
    b = _encoder().encode_numeric(tokens)
    assert np.array_equal(a, b)


def test_encoder_output_unit_norm():
    rng = np.random.default_rng(9)
    out = _encoder().encode_numeric(rng.normal(size=(7, 3, 16)))
    np.testing.assert_allclose(np.linalg.norm(out, axis=-1), 1.0, atol=1e-9)


def test_encoder_seeds_decorrelate():
    enc1, enc2 = _encoder(1), _encoder(2)
    rng = np.random.default_rng(10)
    bundles = rng.normal(size=(100, 5, 16))
    a = enc1.encode_numeric(bundles)
    b = enc2.encode_numeric(bundles)
    cos = np.sum(a * b, axis=-1)
    assert np.all(cos < 0.99)


def test_encoder_width_head_divisibility():
    with pytest.raises(ParameterError):
        pr.FrozenTextEncoder(0, e=18, d=16)


def test_encoder_tape_and_numeric_paths_agree():
    enc = _encoder()
    rng = np.random.default_rng(11)
    tokens = rng.normal(size=(5, 16))
    t = ad.Tape()
    via_tape = enc.encode(t, t.constant(tokens)).data
    np.testing.assert_allclose(via_tape, enc.encode_numeric(tokens[None]), atol=1e-12)


def test_encode_stacked_matches_per_sequence():
    enc = _encoder()
    rng = np.random.default_rng(12)
    seqs = rng.normal(size=(3, 4, 16))
    t = ad.Tape()
    stacked = enc.encode_stacked(t, t.constant(seqs.reshape(12, 16)), 3).data
    for s in range(3):
        t2 = ad.Tape()
        single = enc.encode(t2, t2.constant(seqs[s])).data[0]
        np.testing.assert_allclose(stacked[s], single, atol=1e-12)


def test_encoder_gradients_into_context():
    enc = _encoder()
    rng = np.random.default_rng(13)
    init = {"ctx": rng.normal(size=(2, 16))}
    cls_row = rng.normal(size=(1, 16))
    target = rng.normal(size=16)

    def f(params):
        t = ad.Tape()
        ctx = t.leaf(params["ctx"], "ctx")
        seq = ad.concat_rows([ctx, t.constant(cls_row)])
        out = enc.encode(t, seq)
        diff = ad.sub(out, t.constant(target[None, :]))
        loss = ad.sum_all(ad.mul(diff, diff))
        return float(loss.data), lambda: t.backward(loss)

    assert ad.finite_diff_check(f, init, h=1e-5) < 1e-4


def test_encoder_fingerprint_stable():
    assert _encoder().fingerprint() == _encoder().fingerprint()
    assert _encoder(1).fingerprint() != _encoder(2).fingerprint()


def test_token_vector_unit_and_deterministic():
    enc = _encoder()
    v = enc.token_vector("harbor")
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(v, enc.token_vector("harbor"))
    assert not np.array_equal(v, enc.token_vector("beach"))


def test_grounding_band_limited():
    # token grounding vectors carry no energy above the tower's band
    from freqprompt.spectral import dft_1d, centered_frequency

    enc = pr.FrozenTextEncoder(0, e=64, d=64)
    g = enc.grounding("forest")
    mags = dft_1d(g).magnitude()
    outside = [
        mags[q]
        for q in range(64)
        if enc.band_mask[q] == 0 and enc.band_mask[(64 - q) % 64] == 0
    ]
    assert max(outside) < 1e-9


def test_tokenize_template():
    assert pr.tokenize_template("a photo of a {}", "beach") == ["a", "photo", "of", "a", "beach"]
    with pytest.raises(TemplateError):
        pr.tokenize_template("no slot here", "beach")


def test_reference_embeddings_shapes():
    enc = _encoder()
    out = pr.reference_prompt_embeddings(enc, ["a", "b"], ["a photo of a {}"])
    assert out.shape == (1, 2, 16)
    four = pr.reference_prompt_embeddings(
        enc, [f"c{i}" for i in range(16)], list(pr.DEFAULT_TEMPLATES)
    )
    assert four.shape == (4, 16, 16)


def test_reference_embeddings_duplicate_templates():
    enc = _encoder()
    out = pr.reference_prompt_embeddings(enc, ["a"], ["a {}", "a {}"])
    np.testing.assert_array_equal(out[0], out[1])


def test_reference_embeddings_pure():
    enc = _encoder()
    a = pr.reference_prompt_embeddings(enc, ["a", "b"], ["a photo of a {}"])
    b = pr.reference_prompt_embeddings(enc, ["a", "b"], ["a photo of a {}"])
    np.testing.assert_array_equal(a, b)


def test_reference_embeddings_need_templates():
    with pytest.raises(ParameterError):
        pr.reference_prompt_embeddings(_encoder(), ["a"], [])


def test_encode_words_rejects_empty():
    with pytest.raises(DimensionError):
        _encoder().encode_words(ad.Tape(), [])
