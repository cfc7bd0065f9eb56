"""SGD training loop with warmup schedule, seeding, and checkpointing."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .conditioning import ConditioningParams
from .data_io import feature_batch
from .errors import (
    ContractError,
    DataFormatError,
    NumericError,
    ParameterError,
)
from .objective import LossConfig, Model, loss_ce, loss_rpa, loss_total
from .prompting import (
    DEFAULT_TEMPLATES,
    FrozenTextEncoder,
    PromptState,
    reference_prompt_embeddings,
)
from .spectral import build_lowpass_mask

CHECKPOINT_MAGIC = b"FDCK"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 50
    base_lr: float = 2e-3
    warmup_lr: float = 1e-5
    warmup_epochs: int = 1
    batch_size: int = 4
    seed: int = 0
    schedule: str = "cosine"
    clip_norm: float = 10.0  # None disables gradient clipping

    def __post_init__(self):
        if self.base_lr <= 0 or self.warmup_lr <= 0:
            raise ParameterError("learning rates must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ParameterError("epochs and batch_size must be >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise ParameterError(f"unknown schedule {self.schedule!r}")


@dataclass
class ModelConfig:
    d: int
    k: int
    context_length: int = 4
    n_heads: int = 4
    lambda_scale: float = 0.3
    encoder_seed: int = 0
    token_width: int = None  # defaults to d
    templates: tuple = DEFAULT_TEMPLATES
    tau: float = 0.01

    def __post_init__(self):
        if self.token_width is None:
            self.token_width = self.d


def lr_at(epoch, cfg):
    """Warmup rate during warmup epochs, then cosine decay (or constant)."""
    if not 0 <= epoch < cfg.epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.warmup_lr
    if cfg.schedule == "constant":
        return cfg.base_lr
    span = cfg.epochs - cfg.warmup_epochs
    t = epoch - cfg.warmup_epochs
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * t / span))


def sgd_step(params, grads, rate):
    """In-place p <- p - rate * g for every learnable array."""
    for name, value in params.items():
        if name not in grads:
            raise ContractError(f"missing gradient for learnable '{name}'")
        value -= rate * grads[name]


def clip_gradients(grads, max_norm):
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm is not None and total > max_norm > 0:
        factor = max_norm / total
        for name in grads:
            grads[name] = grads[name] * factor
    return total


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def epoch_rng(seed, epoch):
    return np.random.default_rng(_splitmix64((seed << 20) ^ epoch))


def build_model(model_cfg, class_names, seed):
    cond = ConditioningParams.init(
        model_cfg.d,
        n_heads=model_cfg.n_heads,
        lambda_scale=model_cfg.lambda_scale,
        seed=_splitmix64(seed ^ 0xC0DE),
    )
    encoder = FrozenTextEncoder(
        model_cfg.encoder_seed, e=model_cfg.token_width, d=model_cfg.d
    )
    prompt = PromptState.init(
        model_cfg.d,
        model_cfg.token_width,
        model_cfg.context_length,
        seed=_splitmix64(seed ^ 0x9B0B),
        encoder=encoder,
    )
    spec = build_lowpass_mask(model_cfg.d, model_cfg.k)
    return Model(cond, prompt, encoder, spec, class_names, tau=model_cfg.tau)


@dataclass
class Checkpoint:
    params: dict  # name -> float32 array
    step: int
    epoch: int
    seed: int
    config_hash: bytes = b"\x00" * 32

    def __post_init__(self):
        if len(self.config_hash) != 32:
            raise ParameterError("config hash must be 32 bytes")


def save_checkpoint(ckpt, path):
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<I", CHECKPOINT_VERSION)
    out += ckpt.config_hash
    out += struct.pack("<QQQ", ckpt.step, ckpt.epoch, ckpt.seed)
    out += struct.pack("<I", len(ckpt.params))
    for name in sorted(ckpt.params):
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise DataFormatError(f"truncated checkpoint ({what})", offset=pos)
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise DataFormatError("bad checkpoint magic", offset=0)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}")
    config_hash = take(32, "config hash")
    step, epoch, seed = struct.unpack("<QQQ", take(24, "counters"))
    (n_arrays,) = struct.unpack("<I", take(4, "array count"))
    params = {}
    for _ in range(n_arrays):
        (ln,) = struct.unpack("<H", take(2, "name length"))
        name = take(ln, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * count, f"array {name}"), dtype="<f4")
        params[name] = arr.reshape(dims).copy()
    if pos != len(blob):
        raise DataFormatError("trailing bytes after checkpoint", offset=pos)
    return Checkpoint(
        params=params, step=step, epoch=epoch, seed=seed, config_hash=config_hash
    )


def model_to_checkpoint(model, step, epoch, seed, config_hash=b"\x00" * 32):
    params = {
        name: np.asarray(value, dtype=np.float32)
        for name, value in model.leaf_arrays().items()
    }
    return Checkpoint(
        params=params, step=step, epoch=epoch, seed=seed, config_hash=config_hash
    )


def apply_checkpoint(model, ckpt):
    model.load_leaves({k: v.astype(np.float64) for k, v in ckpt.params.items()})


@dataclass
class TrainResult:
    model: Model
    checkpoint: Checkpoint
    trace: list = field(default_factory=list)  # per-epoch loss dicts


def resolve_ablations(model_cfg, loss_cfg, ablations):
    """Apply ablation flags: no_ffb (k=d), no_rpa (weight 0), no_fusion."""
    ablations = frozenset(ablations)
    unknown = ablations - {"no_ffb", "no_rpa", "no_fusion"}
    if unknown:
        raise ParameterError(f"unknown ablation flags {sorted(unknown)}")
    if "no_ffb" in ablations:
        model_cfg = ModelConfig(**{**model_cfg.__dict__, "k": model_cfg.d})
    if "no_fusion" in ablations:
        model_cfg = ModelConfig(**{**model_cfg.__dict__, "lambda_scale": 0.0})
    if "no_rpa" in ablations:
        loss_cfg = LossConfig(
            tau=loss_cfg.tau,
            rpa_weight=0.0,
            variant_count=loss_cfg.variant_count,
            seen_class_count=loss_cfg.seen_class_count,
        )
    return model_cfg, loss_cfg


def train_run(
    ds,
    split,
    model_cfg,
    train_cfg,
    loss_cfg=None,
    ablations=(),
    config_hash=b"\x00" * 32,
    start_checkpoint=None,
):
    """Train over few-shot batches; returns the model, checkpoint, and trace."""
    if len(split.train_ids) == 0:
        raise ParameterError("empty training stream")
    loss_cfg = loss_cfg or LossConfig(seen_class_count=len(split.spec.seen_classes))
    model_cfg, loss_cfg = resolve_ablations(model_cfg, loss_cfg, ablations)

    seen = sorted(split.spec.seen_classes)
    model = build_model(model_cfg, ds.class_names, train_cfg.seed)
    if start_checkpoint is not None:
        apply_checkpoint(model, start_checkpoint)
    class_pos = {cid: i for i, cid in enumerate(seen)}

    use_rpa = loss_cfg.rpa_weight > 0.0
    reference = None
    if use_rpa:
        if ds.text_bank is not None:
            reference = ds.text_bank[:, seen, :].astype(np.float64)
        else:
            reference = reference_prompt_embeddings(
                model.encoder,
                [ds.class_names[c] for c in seen],
                model_cfg.templates[: loss_cfg.variant_count],
            )

    learnable = model.leaf_arrays()
    step = 0
    trace = []
    start_epoch = 0 if start_checkpoint is None else start_checkpoint.epoch
    for epoch in range(start_epoch, train_cfg.epochs):
        rate = lr_at(epoch, train_cfg)
        order = epoch_rng(train_cfg.seed, epoch).permutation(split.train_ids)
        ce_sum = rpa_sum = total_sum = 0.0
        n_batches = 0
        for lo in range(0, len(order), train_cfg.batch_size):
            ids = order[lo : lo + train_cfg.batch_size]
            batch = feature_batch(ds, ids)
            labels = np.array([class_pos[int(c)] for c in batch.labels])
            try:
                res = model.forward(
                    batch.features, seen, trainable=True, want_alignment=use_rpa
                )
                l_ce = loss_ce(res.posterior, labels)
                l_rpa = (
                    loss_rpa(res.learned_class_embeddings, reference)
                    if use_rpa
                    else None
                )
                l_tot = loss_total(l_ce, l_rpa, loss_cfg.rpa_weight)
                grads = res.tape.backward(l_tot)
            except NumericError as exc:
                norms = {
                    name: float(np.linalg.norm(v)) for name, v in learnable.items()
                }
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}: {exc}; "
                    f"parameter norms {norms}"
                ) from exc
            clip_gradients(grads, train_cfg.clip_norm)
            sgd_step(learnable, grads, rate)
            ce_sum += float(l_ce.data)
            rpa_sum += float(l_rpa.data) if l_rpa is not None else 0.0
            total_sum += float(l_tot.data)
            n_batches += 1
            step += 1
        trace.append(
            {
                "epoch": epoch,
                "lr": rate,
                "ce": ce_sum / n_batches,
                "rpa": rpa_sum / n_batches,
                "total": total_sum / n_batches,
            }
        )
    ckpt = model_to_checkpoint(
        model, step, train_cfg.epochs, train_cfg.seed, config_hash
    )
    return TrainResult(model=model, checkpoint=ckpt, trace=trace)
