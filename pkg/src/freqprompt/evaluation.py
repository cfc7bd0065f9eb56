"""Metrics, the three-task evaluation harness, sweeps, and gradient audit."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data_io import feature_batch, make_split
from .errors import ParameterError
from .objective import (
    LossConfig,
    loss_ce,
    loss_rpa,
    loss_total,
    loss_value_numeric,
    predict,
)
from .prompting import reference_prompt_embeddings, tokenize_template
from .trainer import ModelConfig, TrainConfig, build_model, train_run


def harmonic_mean(base, new):
    """2ab/(a+b) in percent; both zero -> 0 by convention."""
    if base < 0 or new < 0:
        raise ParameterError("accuracies must be >= 0")
    if base + new == 0:
        return 0.0
    return 2.0 * base * new / (base + new)


def evaluate_accuracy(
    model, ds, record_ids, class_ids, batch_size=1, context_override=None
):
    """Top-1 accuracy in percent over the given records.

    Default batch size 1 mirrors deployment, where the batch self-attention
    branch is a pass-through.
    """
    record_ids = np.asarray(record_ids)
    if len(class_ids) == 0 or len(record_ids) == 0:
        raise ParameterError("empty evaluation set or class set")
    correct = 0
    for lo in range(0, len(record_ids), batch_size):
        ids = record_ids[lo : lo + batch_size]
        batch = feature_batch(ds, ids)
        posterior, _, _ = model.forward_numeric(
            batch.features,
            list(class_ids),
            context_override=context_override,
        )
        for row, label in zip(posterior, batch.labels):
            if class_ids[predict(row)] == int(label):
                correct += 1
    return 100.0 * correct / len(record_ids)


@dataclass
class MetricsReport:
    task: str
    seed: int
    config_hash: str
    ablations: tuple = ()
    accuracies: dict = field(default_factory=dict)  # split name -> percent
    summary: dict = field(default_factory=dict)  # metric name -> value

    def lines(self):
        out = [f"task={self.task}", f"seed={self.seed}", f"config_hash={self.config_hash}"]
        out.append("ablations=" + ",".join(sorted(self.ablations)))
        for name in sorted(self.accuracies):
            out.append(f"accuracy.{name}={self.accuracies[name]:.4f}")
        for name in sorted(self.summary):
            out.append(f"summary.{name}={self.summary[name]:.4f}")
        return out


def evaluate_split(model, ds, split, batch_size=1, context_override=None):
    """Per-eval-set accuracies plus the task's headline metric."""
    spec = split.spec
    unseen = sorted(spec.unseen_classes)
    seen = sorted(spec.seen_classes)
    accuracies = {}
    for name, ids in split.eval_sets.items():
        classes = seen if name == "base" else unseen
        accuracies[name] = evaluate_accuracy(
            model, ds, ids, classes, batch_size=batch_size,
            context_override=context_override,
        )
    summary = {}
    if spec.task == "b2n":
        summary["hm"] = harmonic_mean(accuracies["base"], accuracies["new"])
        summary["metric"] = summary["hm"]
    else:
        targets = [v for k, v in accuracies.items() if k.startswith("target:")]
        summary["mean_target"] = float(np.mean(targets))
        summary["metric"] = summary["mean_target"]
    return accuracies, summary


def run_experiment(
    ds,
    task,
    shots,
    seed,
    model_cfg,
    train_cfg=None,
    loss_cfg=None,
    ablations=(),
    config_hash=b"\x00" * 32,
    eval_batch=1,
    eval_template=None,
):
    """Split, train, evaluate; the one-stop harness behind the CLI."""
    train_cfg = train_cfg or TrainConfig(seed=seed)
    if train_cfg.seed != seed:
        raise ParameterError("train_cfg.seed must match the experiment seed")
    split = make_split(ds, task, seed, shots)
    if loss_cfg is None:
        loss_cfg = LossConfig(seen_class_count=len(split.spec.seen_classes))
    result = train_run(
        ds, split, model_cfg, train_cfg, loss_cfg, ablations, config_hash
    )
    override = None
    if eval_template is not None:
        words = eval_template.replace("{}", "").split()
        if not words:
            raise ParameterError("evaluation template has no words")
        m = result.model.prompt.m
        override = np.stack(
            [result.model.encoder.token_vector(words[i % len(words)]) for i in range(m)]
        )
    accuracies, summary = evaluate_split(
        result.model, ds, split, batch_size=eval_batch, context_override=override
    )
    report = MetricsReport(
        task=task,
        seed=seed,
        config_hash=config_hash.hex(),
        ablations=tuple(sorted(ablations)),
        accuracies=accuracies,
        summary=summary,
    )
    return result, report


def k_sensitivity_sweep(
    ds,
    task,
    shots,
    model_cfg,
    train_cfg,
    k_list,
    seeds,
    loss_cfg=None,
    eval_batch=1,
):
    """Train/evaluate per (k, seed); rows of (k, mean metric, std)."""
    d = model_cfg.d
    for k in k_list:
        if not 1 <= k <= d:
            raise ParameterError(f"sweep k={k} outside [1, {d}]")
    rows = []
    for k in k_list:
        cfg = ModelConfig(**{**model_cfg.__dict__, "k": int(k)})
        metrics = []
        for seed in seeds:
            tc = TrainConfig(**{**train_cfg.__dict__, "seed": int(seed)})
            _, report = run_experiment(
                ds, task, shots, int(seed), cfg, tc, loss_cfg, eval_batch=eval_batch
            )
            metrics.append(report.summary["metric"])
        rows.append((int(k), float(np.mean(metrics)), float(np.std(metrics))))
    return rows


def sweep_csv(rows):
    lines = ["k,mean,std"]
    for k, mean, std in rows:
        lines.append(f"{k},{mean:.4f},{std:.4f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# full-pipeline gradient audit


def gradcheck_full(
    d=16, batch=3, context_length=2, n_classes=4, ks=(16, 11), seed=0, h=1e-5
):
    """Finite-difference audit of the complete loss. Returns max rel. error."""
    rng = np.random.default_rng(seed)
    names = [f"class_{i:02d}" for i in range(n_classes)]
    feats = rng.normal(size=(batch, d))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    labels = rng.integers(0, n_classes, size=batch)
    worst = 0.0
    for k in ks:
        cfg = ModelConfig(d=d, k=int(k), context_length=context_length)
        model = build_model(cfg, names, seed)
        loss_cfg = LossConfig(seen_class_count=n_classes)
        reference = reference_prompt_embeddings(
            model.encoder, names, cfg.templates[:2]
        )

        def run(params):
            model.load_leaves(params)
            value = loss_value_numeric(
                model, feats, labels, list(range(n_classes)), reference,
                loss_cfg.rpa_weight,
            )

            def grads():
                # Analytic side comes from the tape; the loss values fed to
                # the central differences come from the tape-free path, so
                # the audit cross-validates both implementations.
                res = model.forward(
                    feats, list(range(n_classes)), trainable=True,
                    want_alignment=True,
                )
                l_ce = loss_ce(res.posterior, labels)
                l_rpa = loss_rpa(res.learned_class_embeddings, reference)
                l_tot = loss_total(l_ce, l_rpa, loss_cfg.rpa_weight)
                if abs(float(l_tot.data) - value) > 1e-9 * max(1.0, abs(value)):
                    raise ParameterError(
                        "tape and numeric loss paths disagree at the base point"
                    )
                return res.tape.backward(l_tot)

            return value, grads

        start = {name: v.copy() for name, v in model.leaf_arrays().items()}
        worst = max(worst, ad.finite_diff_check(run, start, h=h))
    return worst
