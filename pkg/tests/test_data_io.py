"""Binary dataset format, split construction, and the synthetic generator."""
import numpy as np
import pytest

from freqprompt import data_io as dio
from freqprompt.errors import (
    DataFormatError,
    InsufficientDataError,
    ParameterError,
)
from freqprompt.spectral import build_lowpass_mask, centered_frequency, dft_1d, ffb_filter


def _tiny_dataset(with_bank=False, seed=0):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(12, 8))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    bank = None
    if with_bank:
        bank = rng.normal(size=(2, 3, 8)).astype(np.float32)
        bank /= np.linalg.norm(bank, axis=2, keepdims=True)
    return dio.EmbeddingDataset(
        class_names=["harbor", "beach", "forest"],
        domain_names=["dom_0", "dom_1"],
        features=feats.astype(np.float32),
        labels=np.repeat(np.arange(3), 4),
        domains=np.tile(np.arange(2), 6),
        text_bank=bank,
    )


@pytest.mark.parametrize("with_bank", [False, True])
def test_roundtrip_field_by_field(tmp_path, with_bank):
    ds = _tiny_dataset(with_bank=with_bank)
    path = tmp_path / "ds.fdne"
    dio.write_dataset(ds, path)
    back = dio.read_dataset(path)
    assert back == ds


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.fdne"
    ds = _tiny_dataset()
    dio.write_dataset(ds, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError, match="magic"):
        dio.read_dataset(path)


def test_bad_version(tmp_path):
    path = tmp_path / "ver.fdne"
    dio.write_dataset(_tiny_dataset(), path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError, match="version"):
        dio.read_dataset(path)


def test_truncated_records_reports_offset(tmp_path):
    path = tmp_path / "trunc.fdne"
    dio.write_dataset(_tiny_dataset(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(DataFormatError) as err:
        dio.read_dataset(path)
    assert "truncated" in str(err.value)
    assert err.value.offset is not None


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "trail.fdne"
    dio.write_dataset(_tiny_dataset(), path)
    path.write_bytes(path.read_bytes() + b"\x00\x01")
    with pytest.raises(DataFormatError, match="trailing"):
        dio.read_dataset(path)


def test_nonfinite_features_rejected(tmp_path):
    ds = _tiny_dataset()
    path = tmp_path / "nan.fdne"
    dio.write_dataset(ds, path)
    raw = bytearray(path.read_bytes())
    # poison the last feature row with a NaN
    nan = np.array([np.nan], dtype="<f4").tobytes()
    raw[-4:] = nan
    path.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError, match="non-finite"):
        dio.read_dataset(path)


def test_nonunit_rows_renormalized_with_warning(tmp_path, caplog):
    ds = _tiny_dataset()
    ds.features[0] *= 1.5
    path = tmp_path / "norm.fdne"
    dio.write_dataset(ds, path)
    with caplog.at_level("WARNING"):
        back = dio.read_dataset(path)
    assert any("renormalizing" in r.message for r in caplog.records)
    assert np.linalg.norm(back.features[0].astype(np.float64)) == pytest.approx(
        1.0, abs=1e-6
    )


def test_feature_batch_float64_unit_rows():
    ds = _tiny_dataset()
    batch = dio.feature_batch(ds, np.array([0, 3, 7]))
    assert batch.features.dtype == np.float64
    np.testing.assert_allclose(np.linalg.norm(batch.features, axis=1), 1.0, atol=1e-12)
    assert batch.labels.tolist() == ds.labels[[0, 3, 7]].tolist()


# ---------------------------------------------------------------------------
# splits


def _split_dataset(n_classes=16, n_domains=2, per=6, seed=3):
    rng = np.random.default_rng(seed)
    n = n_classes * n_domains * per
    feats = rng.normal(size=(n, 8))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    labels = np.repeat(np.arange(n_classes), n_domains * per)
    domains = np.tile(np.repeat(np.arange(n_domains), per), n_classes)
    return dio.EmbeddingDataset(
        class_names=[f"class_{i:02d}" for i in range(n_classes)],
        domain_names=[f"dom_{j}" for j in range(n_domains)],
        features=feats.astype(np.float32),
        labels=labels,
        domains=domains,
    )


def test_b2n_half_split_sixteen_classes():
    ds = _split_dataset()
    split = dio.make_split(ds, "b2n", seed=0, shots=4)
    assert len(split.spec.seen_classes) == 8
    assert len(split.spec.unseen_classes) == 8
    assert not set(split.spec.seen_classes) & set(split.spec.unseen_classes)
    # alphabetical: zero-padded names sort numerically
    assert sorted(split.spec.seen_classes) == list(range(8))


def test_shots_exact_pool():
    ds = _split_dataset(n_classes=2, per=8)  # 16 per class over 2 domains
    split = dio.make_split(ds, "b2n", seed=1, shots=16)
    assert len(split.train_ids) == 16
    assert set(ds.labels[split.train_ids]) == {0}


def test_shots_insufficient_names_class():
    ds = _split_dataset(n_classes=4, per=2)
    with pytest.raises(InsufficientDataError, match="class_0"):
        dio.make_split(ds, "b2n", seed=0, shots=50)


def test_split_deterministic():
    ds = _split_dataset()
    a = dio.make_split(ds, "b2n", seed=7, shots=4)
    b = dio.make_split(ds, "b2n", seed=7, shots=4)
    np.testing.assert_array_equal(a.train_ids, b.train_ids)
    for name in a.eval_sets:
        np.testing.assert_array_equal(a.eval_sets[name], b.eval_sets[name])


def test_dg_split_structure():
    ds = _split_dataset(n_classes=4, n_domains=3)
    split = dio.make_split(ds, "dg", seed=0, shots=4)
    assert split.spec.seen_classes == split.spec.unseen_classes
    assert split.spec.source_domains == (0,)
    assert split.spec.target_domains == (1, 2)
    assert set(ds.domains[split.train_ids]) == {0}
    assert set(split.eval_sets) == {"target:dom_1", "target:dom_2"}


def test_cd_split_structure():
    ds = _split_dataset(n_classes=6, n_domains=2)
    split = dio.make_split(ds, "cd", seed=0, shots=4)
    assert not set(split.spec.seen_classes) & set(split.spec.unseen_classes)
    assert set(ds.domains[split.train_ids]) == {0}


@pytest.mark.parametrize("task", ["b2n", "cd", "dg"])
def test_no_leakage_fifty_seeds(task):
    ds = _split_dataset(n_classes=6, n_domains=2, per=8)
    for seed in range(50):
        split = dio.make_split(ds, task, seed=seed, shots=3)
        train = set(split.train_ids.tolist())
        unseen = set(split.spec.unseen_classes)
        for i in train:
            if task != "dg":
                assert ds.labels[i] not in unseen
            assert ds.domains[i] in set(split.spec.source_domains)
        if task in ("cd", "dg"):
            for ids in split.eval_sets.values():
                assert not train & set(ids.tolist())
        else:
            assert not train & set(split.eval_sets["base"].tolist())
            assert not train & set(split.eval_sets["new"].tolist())


def test_unknown_task():
    with pytest.raises(ParameterError):
        dio.make_split(_split_dataset(), "zz", seed=0, shots=1)


# ---------------------------------------------------------------------------
# synthetic generator


def test_synth_record_count_and_names():
    ds = dio.synth_generate(3, 2, 32, 5, 8, [0.0, 0.1], seed=0)
    assert ds.n_records == 3 * 2 * 5
    assert ds.class_names == ["class_00", "class_01", "class_02"]
    assert ds.domain_names == ["dom_0", "dom_1"]
    assert ds.text_bank is None


def test_synth_within_class_cosine_at_zero_gain():
    ds = dio.synth_generate(4, 1, 64, 8, 16, [0.0], seed=1)
    feats = ds.features.astype(np.float64)
    for cid in range(4):
        rows = feats[ds.labels == cid]
        sims = rows @ rows.T
        assert sims.min() > 0.98


def test_synth_zero_gain_band_energy():
    ds = dio.synth_generate(2, 1, 64, 4, 16, [0.0], seed=2)
    for row in ds.features.astype(np.float64):
        mags = dft_1d(row).magnitude() ** 2
        above = sum(
            mags[q] for q in range(64) if abs(centered_frequency(q, 64)) >= 8
        )
        assert above / mags.sum() < 1e-9


def test_synth_reproducible():
    a = dio.synth_generate(3, 2, 32, 4, 8, [0.0, 0.5], seed=9)
    b = dio.synth_generate(3, 2, 32, 4, 8, [0.0, 0.5], seed=9)
    assert a == b


def test_synth_filter_tightens_classes():
    # retaining k=low_band bins must reduce mean within-class distance
    # whenever clutter is present
    ds = dio.synth_generate(4, 1, 64, 8, 16, [0.6], seed=3)
    feats = ds.features.astype(np.float64)
    mask = build_lowpass_mask(64, 16).mask
    filtered = ffb_filter(feats, mask)

    def mean_within(rows_by_class):
        total, count = 0.0, 0
        for cid in range(4):
            rows = rows_by_class[ds.labels == cid]
            for i in range(len(rows)):
                for j in range(i + 1, len(rows)):
                    total += np.linalg.norm(rows[i] - rows[j])
                    count += 1
        return total / count

    assert mean_within(filtered) < mean_within(feats)


def test_synth_parameter_validation():
    with pytest.raises(ParameterError):
        dio.synth_generate(0, 1, 32, 4, 8, [0.0], seed=0)
    with pytest.raises(ParameterError):
        dio.synth_generate(2, 1, 32, 4, 40, [0.0], seed=0)
    with pytest.raises(ParameterError):
        dio.synth_generate(2, 2, 32, 4, 8, [0.0], seed=0)  # one gain, two domains
    with pytest.raises(ParameterError):
        dio.synth_generate(2, 1, 32, 4, 8, [-0.1], seed=0)


def test_synth_clutter_confined_to_high_band():
    low, high = dio._band_masks(128, 32)
    freqs = np.array([centered_frequency(q, 128) for q in range(128)])
    # guard gap between prototype band and clutter band
    assert set(np.abs(freqs[low > 0])) <= set(range(16))
    assert np.abs(freqs[high > 0]).min() >= 24
