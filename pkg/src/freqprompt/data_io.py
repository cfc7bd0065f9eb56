"""Embedding dataset container, binary file format, splits, and synthesis.

File format (little-endian): magic "FDNE" | version u32 | d u32 |
n_classes u32 | n_domains u32 | n_records u64 | flags u32 (bit0 text_bank
present, bit1 variant count follows) | [Z u32] | class-name table |
domain-name table | records (class u32, domain u32, d float32) |
optional text_bank Z*C*d float32. Name tables are u16 length-prefixed
UTF-8. Trailing bytes are a format error.

Storage is float32; computation is float64 (conversion happens when a
FeatureBatch is built).
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    DataFormatError,
    InsufficientDataError,
    ParameterError,
)
from .prompting import FrozenTextEncoder
from .spectral import build_lowpass_mask, centered_frequency, ffb_filter

log = logging.getLogger(__name__)

MAGIC = b"FDNE"
VERSION = 1
_FLAG_TEXT_BANK = 1
_FLAG_VARIANT_COUNT = 2
NORM_WARN_TOL = 1e-3
_NORM_FIX_TOL = 1e-6


@dataclass
class EmbeddingDataset:
    class_names: list
    domain_names: list
    features: np.ndarray  # (N, d) float32 unit rows
    labels: np.ndarray  # (N,) int64 class indices
    domains: np.ndarray  # (N,) int64 domain indices
    text_bank: Optional[np.ndarray] = None  # (Z, C, d) float32

    def __post_init__(self):
        n, d = self.features.shape
        if self.labels.shape != (n,) or self.domains.shape != (n,):
            raise DataFormatError("record index arrays do not match feature count")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataFormatError("class index out of range")
        if n and (self.domains.min() < 0 or self.domains.max() >= len(self.domain_names)):
            raise DataFormatError("domain index out of range")
        if self.text_bank is not None and self.text_bank.shape[1:] != (
            len(self.class_names),
            d,
        ):
            raise DataFormatError(f"text_bank shape {self.text_bank.shape} inconsistent")

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def n_records(self):
        return self.features.shape[0]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingDataset):
            return NotImplemented
        same_bank = (
            self.text_bank is None
            and other.text_bank is None
            or (
                self.text_bank is not None
                and other.text_bank is not None
                and np.array_equal(self.text_bank, other.text_bank)
            )
        )
        return (
            self.class_names == other.class_names
            and self.domain_names == other.domain_names
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.domains, other.domains)
            and same_bank
        )


@dataclass
class FeatureBatch:
    """Float64 view of selected records, rows renormalized to unit length."""

    features: np.ndarray  # (B, d) float64
    labels: np.ndarray
    domain_id: str


def feature_batch(ds, record_ids, domain_id="mixed"):
    rows = ds.features[record_ids].astype(np.float64)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DataFormatError("zero feature row cannot be normalized")
    return FeatureBatch(
        features=rows / norms,
        labels=ds.labels[record_ids].copy(),
        domain_id=domain_id,
    )


# ---------------------------------------------------------------------------
# serialization


def _pack_names(names):
    out = bytearray()
    for name in names:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataFormatError(f"name too long: {name[:32]}...")
        out += struct.pack("<H", len(raw)) + raw
    return bytes(out)


def write_dataset(ds, path):
    flags = 0
    z = 0
    if ds.text_bank is not None:
        flags |= _FLAG_TEXT_BANK | _FLAG_VARIANT_COUNT
        z = ds.text_bank.shape[0]
    header = MAGIC + struct.pack(
        "<IIIIQI",
        VERSION,
        ds.d,
        len(ds.class_names),
        len(ds.domain_names),
        ds.n_records,
        flags,
    )
    if flags & _FLAG_VARIANT_COUNT:
        header += struct.pack("<I", z)
    body = bytearray(header)
    body += _pack_names(ds.class_names)
    body += _pack_names(ds.domain_names)
    feats = np.ascontiguousarray(ds.features, dtype="<f4")
    for i in range(ds.n_records):
        body += struct.pack("<II", int(ds.labels[i]), int(ds.domains[i]))
        body += feats[i].tobytes()
    if ds.text_bank is not None:
        body += np.ascontiguousarray(ds.text_bank, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(body))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise DataFormatError(f"truncated while reading {what}", offset=self.pos)
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_dataset(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise DataFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise DataFormatError(f"unsupported version {version}", offset=4)
    d, n_classes, n_domains, n_records, flags = r.unpack("<IIIQI", "header")
    z = 0
    if flags & _FLAG_VARIANT_COUNT:
        (z,) = r.unpack("<I", "variant count")
    elif flags & _FLAG_TEXT_BANK:
        z = 1

    def read_names(count, what):
        names = []
        for _ in range(count):
            (ln,) = r.unpack("<H", f"{what} length")
            names.append(r.take(ln, what).decode("utf-8"))
        return names

    class_names = read_names(n_classes, "class name")
    domain_names = read_names(n_domains, "domain name")

    labels = np.empty(n_records, dtype=np.int64)
    domains = np.empty(n_records, dtype=np.int64)
    features = np.empty((n_records, d), dtype=np.float32)
    row_bytes = 4 * d
    for i in range(n_records):
        labels[i], domains[i] = r.unpack("<II", f"record {i} indices")
        features[i] = np.frombuffer(r.take(row_bytes, f"record {i} features"), dtype="<f4")
    text_bank = None
    if flags & _FLAG_TEXT_BANK:
        raw = r.take(4 * z * n_classes * d, "text bank")
        text_bank = np.frombuffer(raw, dtype="<f4").reshape(z, n_classes, d).copy()
    if r.pos != len(blob):
        raise DataFormatError(
            f"{len(blob) - r.pos} trailing bytes after dataset", offset=r.pos
        )
    if not np.all(np.isfinite(features)) or (
        text_bank is not None and not np.all(np.isfinite(text_bank))
    ):
        raise DataFormatError("non-finite values in feature data")

    norms = np.linalg.norm(features.astype(np.float64), axis=1)
    off = np.abs(norms - 1.0)
    if np.any(off > _NORM_FIX_TOL):
        worst = float(off.max())
        if worst > NORM_WARN_TOL:
            log.warning(
                "renormalizing %d non-unit feature rows (max deviation %.2e)",
                int((off > _NORM_FIX_TOL).sum()),
                worst,
            )
        fix = off > _NORM_FIX_TOL
        features[fix] = (
            features[fix].astype(np.float64) / norms[fix, None]
        ).astype(np.float32)
    return EmbeddingDataset(
        class_names=class_names,
        domain_names=domain_names,
        features=features,
        labels=labels,
        domains=domains,
        text_bank=text_bank,
    )


# ---------------------------------------------------------------------------
# splits


@dataclass
class SplitSpec:
    task: str  # b2n | cd | dg
    seen_classes: tuple
    unseen_classes: tuple
    source_domains: tuple
    target_domains: tuple
    shots: int

    def __post_init__(self):
        if self.shots < 1:
            raise ParameterError("shots must be >= 1")
        seen, unseen = set(self.seen_classes), set(self.unseen_classes)
        if self.task == "b2n":
            if seen & unseen:
                raise ParameterError("b2n requires disjoint base/new class sets")
        elif self.task == "cd":
            if seen & unseen or set(self.source_domains) & set(self.target_domains):
                raise ParameterError("cd requires disjoint labels and distinct domains")
        elif self.task == "dg":
            if seen != unseen or set(self.source_domains) & set(self.target_domains):
                raise ParameterError("dg requires identical labels, disjoint domains")
        else:
            raise ParameterError(f"unknown task {self.task!r}")


@dataclass
class SplitResult:
    spec: SplitSpec
    train_ids: np.ndarray
    eval_sets: dict  # name -> record id array


def _sample_shots(ds, class_id, pool, shots, rng):
    if len(pool) < shots:
        raise InsufficientDataError(
            f"class {ds.class_names[class_id]!r} has {len(pool)} samples, "
            f"needs {shots}"
        )
    return rng.choice(pool, size=shots, replace=False)


def make_split(ds, task, seed, shots):
    """Build train/eval record splits for one of the three tasks.

    b2n: alphabetical half-split of classes, all domains pooled.
    cd:  half-split of classes AND first domain as source, others as target.
    dg:  all classes, first domain as source, others as target.
    """
    task = task.lower()
    order = sorted(range(len(ds.class_names)), key=lambda i: ds.class_names[i])
    n = len(order)
    rng = np.random.default_rng(seed)
    all_ids = np.arange(ds.n_records)

    if task == "b2n":
        if n < 2:
            raise ParameterError("b2n needs at least 2 classes")
        base = tuple(order[: (n + 1) // 2])
        new = tuple(order[(n + 1) // 2 :])
        spec = SplitSpec(
            task="b2n",
            seen_classes=base,
            unseen_classes=new,
            source_domains=tuple(range(len(ds.domain_names))),
            target_domains=tuple(range(len(ds.domain_names))),
            shots=shots,
        )
        train = []
        for cid in base:
            pool = all_ids[ds.labels == cid]
            train.append(_sample_shots(ds, cid, pool, shots, rng))
        train_ids = np.concatenate(train)
        chosen = set(train_ids.tolist())
        base_set = set(base)
        eval_base = np.array(
            [i for i in all_ids if ds.labels[i] in base_set and i not in chosen],
            dtype=np.int64,
        )
        eval_new = all_ids[np.isin(ds.labels, new)]
        return SplitResult(spec, train_ids, {"base": eval_base, "new": eval_new})

    if task in ("cd", "dg"):
        if len(ds.domain_names) < 2:
            raise ParameterError(f"{task} needs at least 2 domains")
        if task == "cd":
            if n < 2:
                raise ParameterError("cd needs at least 2 classes")
            seen = tuple(order[: (n + 1) // 2])
            unseen = tuple(order[(n + 1) // 2 :])
        else:
            seen = unseen = tuple(order)
        spec = SplitSpec(
            task=task,
            seen_classes=seen,
            unseen_classes=unseen,
            source_domains=(0,),
            target_domains=tuple(range(1, len(ds.domain_names))),
            shots=shots,
        )
        train = []
        for cid in seen:
            pool = all_ids[(ds.labels == cid) & (ds.domains == 0)]
            train.append(_sample_shots(ds, cid, pool, shots, rng))
        train_ids = np.concatenate(train)
        eval_sets = {}
        for dom in spec.target_domains:
            mask = (ds.domains == dom) & np.isin(ds.labels, unseen)
            eval_sets[f"target:{ds.domain_names[dom]}"] = all_ids[mask]
        return SplitResult(spec, train_ids, eval_sets)

    raise ParameterError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# synthetic data


def _band_masks(d, low_band):
    """Prototype band (|f| < low_band/2) and the clutter band above it.

    Clutter occupies the upper part of the complement, from 3/4 of the
    low_band cutoff upward, leaving a guard gap so a retention k modestly
    above low_band still excludes all of it.
    """
    freqs = np.array([centered_frequency(q, d) for q in range(d)])
    low = (np.abs(freqs) < low_band / 2).astype(np.float64)
    cut = min(3 * low_band / 4, d / 2)
    high = (np.abs(freqs) >= cut).astype(np.float64)
    return low, high


def _band_noise(rng, d, mask):
    """Unit-norm real signal with spectrum confined to the masked bins."""
    sig = ffb_filter(rng.standard_normal(d), mask)
    norm = np.linalg.norm(sig)
    if norm == 0:
        raise ParameterError("band mask annihilated the noise draw")
    return sig / norm


def synth_generate(
    n_classes,
    n_domains,
    d,
    samples_per,
    low_band,
    clutter_gain,
    seed,
    encoder_seed=0,
    token_width=None,
):
    """Synthetic embedding dataset with controllable spectral structure.

    Class prototypes live strictly below `low_band/2` in centered frequency
    and are derived from the frozen text tower's token grounding, so that
    class names and visual prototypes are aligned the way a pretrained
    image/text pair would be. Per-domain clutter occupies the complementary
    high band with the given amplitude.
    """
    if n_classes < 1 or n_domains < 1 or samples_per < 1:
        raise ParameterError("counts must be positive")
    if not 2 <= low_band < d:
        raise ParameterError(f"low_band {low_band} outside [2, d)")
    gains = np.asarray(clutter_gain, dtype=np.float64)
    if gains.shape != (n_domains,):
        raise ParameterError(f"need one clutter gain per domain, got {gains.shape}")
    if np.any(gains < 0):
        raise ParameterError("clutter gains must be >= 0")

    class_names = [f"class_{i:02d}" for i in range(n_classes)]
    domain_names = [f"dom_{j}" for j in range(n_domains)]
    low_mask, high_mask = _band_masks(d, low_band)
    encoder = FrozenTextEncoder(encoder_seed, e=token_width or d, d=d)

    protos = np.empty((n_classes, d))
    for i, name in enumerate(class_names):
        p = ffb_filter(encoder.grounding(name), low_mask)
        protos[i] = p / np.linalg.norm(p)

    rng = np.random.default_rng(seed)
    # Each domain has a fixed high-band style direction; per-sample clutter
    # mixes it with fresh high-band noise.
    domain_dirs = [_band_noise(rng, d, high_mask) for _ in range(n_domains)]
    n_total = n_classes * n_domains * samples_per
    features = np.empty((n_total, d), dtype=np.float32)
    labels = np.empty(n_total, dtype=np.int64)
    domains = np.empty(n_total, dtype=np.int64)
    row = 0
    for cid in range(n_classes):
        for dom in range(n_domains):
            for _ in range(samples_per):
                sample = protos[cid] + 0.05 * _band_noise(rng, d, low_mask)
                if gains[dom] > 0:
                    clutter = 0.8 * domain_dirs[dom] + 0.6 * _band_noise(
                        rng, d, high_mask
                    )
                    clutter /= np.linalg.norm(clutter)
                    sample = sample + gains[dom] * clutter
                sample = sample / np.linalg.norm(sample)
                features[row] = sample.astype(np.float32)
                labels[row] = cid
                domains[row] = dom
                row += 1
    return EmbeddingDataset(
        class_names=class_names,
        domain_names=domain_names,
        features=features,
        labels=labels,
        domains=domains,
    )
