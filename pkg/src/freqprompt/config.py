"""Experiment configuration: INI-style files, dotted overrides, hashing."""
from __future__ import annotations

import configparser
import hashlib
import os

from .errors import ParameterError
from .objective import LossConfig
from .trainer import ModelConfig, TrainConfig

DEFAULTS = {
    "data.path": "",
    "data.task": "b2n",
    "data.shots": "16",
    "model.k": "350",
    "model.context_length": "4",
    "model.heads": "4",
    "model.lambda_scale": "0.3",
    "model.encoder_seed": "0",
    "model.templates": (
        "a photo of a {}|satellite photo of a {}|"
        "an aerial image of a {}|remote sensing scene of a {}"
    ),
    "model.tau": "0.01",
    "train.epochs": "50",
    "train.base_lr": "2e-3",
    "train.warmup_lr": "1e-5",
    "train.warmup_epochs": "1",
    "train.batch_size": "4",
    "train.seed": "0",
    "train.schedule": "cosine",
    "train.clip_norm": "10",
    "loss.rpa_weight": "0.5",
    "loss.variants": "4",
    "eval.batch_size": "1",
    "eval.template": "",
    "ablate.no_ffb": "false",
    "ablate.no_rpa": "false",
    "ablate.no_fusion": "false",
}

SEED_ENV_VAR = "FDN_SEED"


def load_config(path=None, overrides=(), env=None):
    """Flat `section.key -> str` mapping from defaults, file, overrides, env."""
    cfg = dict(DEFAULTS)
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
        for section in parser.sections():
            for key, value in parser.items(section):
                full = f"{section}.{key}"
                if full not in DEFAULTS:
                    raise ParameterError(f"unknown config key '{full}'")
                cfg[full] = value
    for item in overrides:
        if "=" not in item:
            raise ParameterError(f"override '{item}' is not of the form key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ParameterError(f"unknown config key '{key}'")
        cfg[key] = value.strip()
    env = os.environ if env is None else env
    if env.get(SEED_ENV_VAR):
        cfg["train.seed"] = env[SEED_ENV_VAR]
    return cfg


def config_hash_bytes(cfg):
    text = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(text.encode("utf-8")).digest()


def _as_int(cfg, key):
    try:
        return int(cfg[key])
    except ValueError as exc:
        raise ParameterError(f"config {key}={cfg[key]!r} is not an integer") from exc


def _as_float(cfg, key):
    try:
        return float(cfg[key])
    except ValueError as exc:
        raise ParameterError(f"config {key}={cfg[key]!r} is not a number") from exc


def _as_bool(cfg, key):
    value = cfg[key].strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"config {key}={cfg[key]!r} is not a boolean")


def model_config(cfg, d):
    templates = tuple(t.strip() for t in cfg["model.templates"].split("|") if t.strip())
    return ModelConfig(
        d=d,
        k=_as_int(cfg, "model.k"),
        context_length=_as_int(cfg, "model.context_length"),
        n_heads=_as_int(cfg, "model.heads"),
        lambda_scale=_as_float(cfg, "model.lambda_scale"),
        encoder_seed=_as_int(cfg, "model.encoder_seed"),
        templates=templates,
        tau=_as_float(cfg, "model.tau"),
    )


def train_config(cfg):
    clip = cfg["train.clip_norm"].strip().lower()
    clip_norm = None if clip in ("", "none", "off") else _as_float(cfg, "train.clip_norm")
    return TrainConfig(
        epochs=_as_int(cfg, "train.epochs"),
        base_lr=_as_float(cfg, "train.base_lr"),
        warmup_lr=_as_float(cfg, "train.warmup_lr"),
        warmup_epochs=_as_int(cfg, "train.warmup_epochs"),
        batch_size=_as_int(cfg, "train.batch_size"),
        seed=_as_int(cfg, "train.seed"),
        schedule=cfg["train.schedule"].strip(),
        clip_norm=clip_norm,
    )


def loss_config(cfg, seen_class_count):
    return LossConfig(
        tau=_as_float(cfg, "model.tau"),
        rpa_weight=_as_float(cfg, "loss.rpa_weight"),
        variant_count=_as_int(cfg, "loss.variants"),
        seen_class_count=seen_class_count,
    )


def ablations(cfg):
    flags = []
    for name in ("no_ffb", "no_rpa", "no_fusion"):
        if _as_bool(cfg, f"ablate.{name}"):
            flags.append(name)
    return tuple(flags)
