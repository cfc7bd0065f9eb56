"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import config as cfgmod
from . import data_io, evaluation, spectral, trainer
from .errors import (
    DataFormatError,
    InsufficientDataError,
    NumericError,
    ParameterError,
    TemplateError,
    UnknownClassError,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

GRADCHECK_TOL = 1e-4


def _int_list(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _float_list(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="freqprompt",
        description="Frequency-filtered prompt learning experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--domains", type=int, default=2)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--samples-per", type=int, default=64)
    p.add_argument("--low-band", type=int, default=32)
    p.add_argument("--clutter-gain", default="0.0,0.6")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--encoder-seed", type=int, default=0)

    p = sub.add_parser("inspect", help="dump a dataset file header")
    p.add_argument("path")

    for name in ("train", "eval"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--report", default=None, help="write key=value report here")
        if name == "train":
            p.add_argument("--checkpoint-out", default=None)
        else:
            p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("sweep-k", help="retention sweep over k values")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--k-list", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", default=None, help="write CSV here (default stdout)")

    p = sub.add_parser("demo-image", help="2D low-pass demo, PGM outputs")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--input", default=None, help="P5 PGM input (default: synthetic)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--keep-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="finite-difference audit of the full loss")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--batch", type=int, default=3)
    p.add_argument("--context-length", type=int, default=2)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--ks", default="16,11")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _read_pgm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(None, 4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise DataFormatError(f"{path} is not a binary P5 PGM")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval > 255:
        raise DataFormatError("only 8-bit PGM supported")
    pixels = np.frombuffer(parts[4][: width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise DataFormatError("truncated PGM pixel data")
    return pixels.reshape(height, width).astype(np.float64)


def _demo_scene(size, seed):
    """Blocky synthetic scene plus high-frequency speckle."""
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size))
    for _ in range(6):
        r0, c0 = rng.integers(0, size, 2)
        r1 = min(size, r0 + rng.integers(4, size // 2))
        c1 = min(size, c0 + rng.integers(4, size // 2))
        img[r0:r1, c0:c1] += rng.uniform(0.3, 1.0)
    img += 0.25 * rng.standard_normal((size, size))
    return img


def _emit_report(report, path):
    print("== metrics report ==")
    for line in report.lines():
        print("  " + line)
    if path:
        with open(path, "w") as fh:
            fh.write("\n".join(report.lines()) + "\n")


def _load_experiment(args):
    cfg = cfgmod.load_config(args.config, args.set)
    if not cfg["data.path"]:
        raise ParameterError("data.path is not set (use --set data.path=FILE)")
    ds = data_io.read_dataset(cfg["data.path"])
    return cfg, ds


def _run(args):
    if args.command == "synth":
        gains = _float_list(args.clutter_gain)
        ds = data_io.synth_generate(
            args.classes,
            args.domains,
            args.dim,
            args.samples_per,
            args.low_band,
            gains,
            args.seed,
            encoder_seed=args.encoder_seed,
        )
        data_io.write_dataset(ds, args.out)
        print(
            f"wrote {args.out}: d={ds.d} classes={len(ds.class_names)} "
            f"domains={len(ds.domain_names)} records={ds.n_records}"
        )
        return EXIT_OK

    if args.command == "inspect":
        ds = data_io.read_dataset(args.path)
        print(f"d={ds.d}")
        print(f"classes={len(ds.class_names)}")
        print(f"domains={len(ds.domain_names)}")
        print(f"records={ds.n_records}")
        bank = ds.text_bank
        print(f"text_bank={'absent' if bank is None else f'present Z={bank.shape[0]}'}")
        norms = np.linalg.norm(ds.features.astype(np.float64), axis=1)
        print(f"max_norm_deviation={np.abs(norms - 1.0).max():.3e}")
        return EXIT_OK

    if args.command == "train":
        cfg, ds = _load_experiment(args)
        chash = cfgmod.config_hash_bytes(cfg)
        mc = cfgmod.model_config(cfg, ds.d)
        tc = cfgmod.train_config(cfg)
        eval_template = cfg["eval.template"].strip() or None
        result, report = evaluation.run_experiment(
            ds,
            cfg["data.task"],
            int(cfg["data.shots"]),
            tc.seed,
            mc,
            tc,
            None,
            cfgmod.ablations(cfg),
            chash,
            eval_batch=int(cfg["eval.batch_size"]),
            eval_template=eval_template,
        )
        for entry in result.trace:
            print(
                f"epoch {entry['epoch']:3d}  lr {entry['lr']:.3e}  "
                f"ce {entry['ce']:.4f}  rpa {entry['rpa']:.4f}  "
                f"total {entry['total']:.4f}"
            )
        if args.checkpoint_out:
            trainer.save_checkpoint(result.checkpoint, args.checkpoint_out)
            print(f"checkpoint -> {args.checkpoint_out}")
        _emit_report(report, args.report)
        return EXIT_OK

    if args.command == "eval":
        cfg, ds = _load_experiment(args)
        chash = cfgmod.config_hash_bytes(cfg)
        mc = cfgmod.model_config(cfg, ds.d)
        tc = cfgmod.train_config(cfg)
        ckpt = trainer.load_checkpoint(args.checkpoint)
        split = data_io.make_split(ds, cfg["data.task"], tc.seed, int(cfg["data.shots"]))
        mc_resolved, _ = trainer.resolve_ablations(
            mc, cfgmod.loss_config(cfg, len(split.spec.seen_classes)),
            cfgmod.ablations(cfg),
        )
        model = trainer.build_model(mc_resolved, ds.class_names, tc.seed)
        trainer.apply_checkpoint(model, ckpt)
        accuracies, summary = evaluation.evaluate_split(
            model, ds, split, batch_size=int(cfg["eval.batch_size"])
        )
        report = evaluation.MetricsReport(
            task=cfg["data.task"],
            seed=tc.seed,
            config_hash=chash.hex(),
            ablations=cfgmod.ablations(cfg),
            accuracies=accuracies,
            summary=summary,
        )
        _emit_report(report, args.report)
        return EXIT_OK

    if args.command == "sweep-k":
        cfg, ds = _load_experiment(args)
        mc = cfgmod.model_config(cfg, ds.d)
        tc = cfgmod.train_config(cfg)
        rows = evaluation.k_sensitivity_sweep(
            ds,
            cfg["data.task"],
            int(cfg["data.shots"]),
            mc,
            tc,
            _int_list(args.k_list),
            _int_list(args.seeds),
            eval_batch=int(cfg["eval.batch_size"]),
        )
        csv = evaluation.sweep_csv(rows)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(csv)
            print(f"sweep table -> {args.out}")
        else:
            print(csv, end="")
        return EXIT_OK

    if args.command == "demo-image":
        img = _read_pgm(args.input) if args.input else _demo_scene(args.size, args.seed)
        filtered, log_mag = spectral.dft_lowpass_2d(img, args.keep_fraction)
        spectral.write_pgm(args.out_prefix + "_original.pgm", img)
        spectral.write_pgm(args.out_prefix + "_filtered.pgm", filtered)
        spectral.write_pgm(args.out_prefix + "_spectrum.pgm", np.fft.fftshift(log_mag))
        print(f"wrote {args.out_prefix}_{{original,filtered,spectrum}}.pgm")
        return EXIT_OK

    if args.command == "gradcheck":
        err = evaluation.gradcheck_full(
            d=args.dim,
            batch=args.batch,
            context_length=args.context_length,
            n_classes=args.classes,
            ks=tuple(_int_list(args.ks)),
            seed=args.seed,
        )
        print(f"max_relative_error={err:.3e} (tolerance {GRADCHECK_TOL:.0e})")
        if err >= GRADCHECK_TOL:
            print("gradcheck FAILED", file=sys.stderr)
            return EXIT_NUMERIC
        print("gradcheck passed")
        return EXIT_OK

    raise ParameterError(f"unknown command {args.command!r}")


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _run(args)
    except (ParameterError, TemplateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        DataFormatError,
        InsufficientDataError,
        UnknownClassError,
        FileNotFoundError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
