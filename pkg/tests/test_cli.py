"""Command-line interface and configuration plumbing."""
import numpy as np
import pytest

from freqprompt import cli
from freqprompt import config as cfgmod
from freqprompt.data_io import read_dataset
from freqprompt.errors import ParameterError


def _synth(tmp_path, name="ds.fdne", classes=4, domains=1, dim=32, per=12,
           low_band=8, gains="0.0"):
    path = tmp_path / name
    code = cli.main([
        "synth", "--out", str(path), "--classes", str(classes),
        "--domains", str(domains), "--dim", str(dim),
        "--samples-per", str(per), "--low-band", str(low_band),
        "--clutter-gain", gains,
    ])
    assert code == cli.EXIT_OK
    return path


def test_synth_and_inspect(tmp_path, capsys):
    path = _synth(tmp_path)
    capsys.readouterr()
    assert cli.main(["inspect", str(path)]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "d=32" in out
    assert "classes=4" in out
    assert "domains=1" in out
    assert "records=48" in out
    ds = read_dataset(path)
    assert ds.n_records == 48


def test_inspect_missing_file(tmp_path):
    assert cli.main(["inspect", str(tmp_path / "no.fdne")]) == cli.EXIT_DATA


def test_inspect_corrupt_file(tmp_path):
    bad = tmp_path / "bad.fdne"
    bad.write_bytes(b"XXXXrest")
    assert cli.main(["inspect", str(bad)]) == cli.EXIT_DATA


def test_unknown_subcommand():
    assert cli.main(["frobnicate"]) == cli.EXIT_USAGE


def test_train_missing_config_file(tmp_path):
    code = cli.main(["train", "--config", str(tmp_path / "missing.cfg")])
    assert code == cli.EXIT_DATA


def test_train_without_data_path():
    assert cli.main(["train"]) == cli.EXIT_USAGE


def test_train_eval_roundtrip(tmp_path, capsys):
    ds_path = _synth(tmp_path)
    ckpt = tmp_path / "run.fdck"
    report = tmp_path / "train.report"
    code = cli.main([
        "train",
        "--set", f"data.path={ds_path}",
        "--set", "data.shots=8",
        "--set", "model.k=16",
        "--set", "model.context_length=2",
        "--set", "train.epochs=1",
        "--checkpoint-out", str(ckpt),
        "--report", str(report),
    ])
    assert code == cli.EXIT_OK
    text = report.read_text()
    assert "task=b2n" in text
    assert "config_hash=" in text
    assert "summary.hm=" in text
    capsys.readouterr()
    code = cli.main([
        "eval",
        "--set", f"data.path={ds_path}",
        "--set", "data.shots=8",
        "--set", "model.k=16",
        "--set", "model.context_length=2",
        "--set", "train.epochs=1",
        "--checkpoint", str(ckpt),
    ])
    assert code == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "accuracy.base=" in out and "accuracy.new=" in out


def test_identical_config_identical_reports(tmp_path):
    ds_path = _synth(tmp_path)
    reports = []
    for name in ("a.report", "b.report"):
        path = tmp_path / name
        code = cli.main([
            "train",
            "--set", f"data.path={ds_path}",
            "--set", "data.shots=8",
            "--set", "model.k=16",
            "--set", "model.context_length=2",
            "--set", "train.epochs=1",
            "--report", str(path),
        ])
        assert code == cli.EXIT_OK
        reports.append(path.read_text())
    assert reports[0] == reports[1]


def test_sweep_k_csv(tmp_path):
    ds_path = _synth(tmp_path)
    out = tmp_path / "sweep.csv"
    code = cli.main([
        "sweep-k",
        "--set", f"data.path={ds_path}",
        "--set", "data.shots=8",
        "--set", "model.context_length=2",
        "--set", "train.epochs=1",
        "--k-list", "8,32",
        "--seeds", "0",
        "--out", str(out),
    ])
    assert code == cli.EXIT_OK
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "k,mean,std"
    assert len(lines) == 3


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck", "--dim", "16"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "gradcheck passed" in out


def test_demo_image(tmp_path):
    prefix = tmp_path / "demo"
    code = cli.main([
        "demo-image", "--out-prefix", str(prefix), "--size", "16",
        "--keep-fraction", "0.5",
    ])
    assert code == cli.EXIT_OK
    for suffix in ("_original.pgm", "_filtered.pgm", "_spectrum.pgm"):
        raw = (tmp_path / ("demo" + suffix)).read_bytes()
        assert raw.startswith(b"P5\n")


def test_demo_image_bad_fraction(tmp_path):
    code = cli.main([
        "demo-image", "--out-prefix", str(tmp_path / "x"), "--keep-fraction", "1.5",
    ])
    assert code == cli.EXIT_USAGE


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults_and_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[train]\nepochs = 7\n[model]\nk = 48\n")
    cfg = cfgmod.load_config(path, env={})
    assert cfg["train.epochs"] == "7"
    assert cfg["model.k"] == "48"
    assert cfg["train.schedule"] == "cosine"


def test_config_unknown_key_rejected(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[train]\nbogus = 1\n")
    with pytest.raises(ParameterError):
        cfgmod.load_config(path, env={})


def test_config_override_form():
    cfg = cfgmod.load_config(None, ["model.k=12"], env={})
    assert cfg["model.k"] == "12"
    with pytest.raises(ParameterError):
        cfgmod.load_config(None, ["model.k"], env={})
    with pytest.raises(ParameterError):
        cfgmod.load_config(None, ["nope.nope=1"], env={})


def test_seed_env_override():
    cfg = cfgmod.load_config(None, [], env={"FDN_SEED": "42"})
    assert cfg["train.seed"] == "42"


def test_config_hash_sensitivity():
    a = cfgmod.config_hash_bytes(cfgmod.load_config(None, [], env={}))
    b = cfgmod.config_hash_bytes(cfgmod.load_config(None, ["model.k=12"], env={}))
    assert len(a) == 32
    assert a != b


def test_config_type_errors():
    cfg = cfgmod.load_config(None, ["model.k=abc"], env={})
    with pytest.raises(ParameterError):
        cfgmod.model_config(cfg, 32)
    cfg = cfgmod.load_config(None, ["ablate.no_ffb=maybe"], env={})
    with pytest.raises(ParameterError):
        cfgmod.ablations(cfg)


def test_config_ablation_flags():
    cfg = cfgmod.load_config(
        None, ["ablate.no_ffb=true", "ablate.no_fusion=on"], env={}
    )
    assert cfgmod.ablations(cfg) == ("no_ffb", "no_fusion")


def test_config_templates_parsed():
    cfg = cfgmod.load_config(None, ["model.templates=a {}|b {}"], env={})
    mc = cfgmod.model_config(cfg, 32)
    assert mc.templates == ("a {}", "b {}")
