import json
import os
import subprocess
import sys

import pytest

from sbp.cli import RunConfig, UsageError, build_config, format_config, make_parser, parse_config_text, run_command
from sbp.dataset import load_dataset


def run(*argv):
    return run_command([str(a) for a in argv])


def files_of(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_unknown_command(capsys):
    assert run("frobnicate") == 1
    assert "usage" in capsys.readouterr().err


def test_no_command():
    assert run() == 1


def test_bad_flag_value():
    assert run("gen-data", "--count", "many", "--out", "x") == 1


def test_missing_required(tmp_path):
    assert run("train-sasn", "--out", tmp_path / "m") == 1


def test_gen_data_zero(tmp_path):
    assert run("gen-data", "--count", 0, "--out", tmp_path / "d") == 0
    manifest, samples = load_dataset(tmp_path / "d")
    assert samples == [] and manifest.samples == []


def test_gen_data_split_and_config(tmp_path):
    out = tmp_path / "d"
    assert run("gen-data", "--count", 4, "--labeled-ratio", 0.5, "--curved-fraction", 0, "--out", out) == 0
    manifest, samples = load_dataset(out)
    assert sorted(r.split for r in manifest.samples) == ["labeled"] * 2 + ["unlabeled"] * 2
    assert all(t.shape_kind == "straight" for s in samples for t in s.instances)
    text = (out / "run_config.txt").read_text()
    assert "count = 4" in text and "curved_fraction = 0.0" in text


def test_eval_identical_files(tmp_path, capsys):
    d = tmp_path / "d"
    assert run("gen-data", "--count", 3, "--out", d) == 0
    capsys.readouterr()
    metrics = tmp_path / "m.json"
    assert run("eval", "--pred", d / "labels.json", "--gt", d / "labels.json", "--out", metrics) == 0
    assert "fscore 1.0000" in capsys.readouterr().out
    obj = json.loads(metrics.read_text())
    assert obj["fscore"] == 1.0
    assert set(obj) == {"precision", "recall", "fscore", "matched", "num_pred", "num_gt"}


def test_eval_prediction_file(tmp_path):
    d = tmp_path / "d"
    run("gen-data", "--count", 2, "--out", d)
    pred = tmp_path / "p.json"
    pred.write_text(json.dumps({"predictions": [[], []]}))
    assert run("eval", "--pred", pred, "--gt", d, "--out", tmp_path / "m.json") == 0
    assert json.loads((tmp_path / "m.json").read_text())["recall"] == 0.0
    pred.write_text(json.dumps({"predictions": [[]]}))
    assert run("eval", "--pred", pred, "--gt", d, "--out", tmp_path / "m.json") == 2


def test_data_errors(tmp_path):
    assert run("eval", "--pred", tmp_path / "nope.json", "--gt", tmp_path / "nope.json") == 2
    d = tmp_path / "d"
    run("gen-data", "--count", 2, "--out", d)
    (d / "images" / "0001.pgm").unlink()
    assert run("train-sasn", "--data", d, "--out", tmp_path / "m.sasn") == 2
    assert run("train-detector", "--data", tmp_path / "missing", "--out", tmp_path / "m.sasn") == 2


def test_pseudo_source_needs_pseudo(tmp_path):
    d = tmp_path / "d"
    run("gen-data", "--count", 2, "--out", d)
    assert run("train-detector", "--data", d, "--source", "pseudo", "--out", tmp_path / "m") == 2
    assert run("train-detector", "--data", d, "--source", "magic", "--out", tmp_path / "m") == 1


def test_config_file_precedence(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("# comment\ncount = 7\nseed=3\n\nsigma = 0.2  # inline\nfiltering = false\n")
    args = make_parser().parse_args(["gen-data", "--config", str(cfgfile), "--count", "5", "--out", "o"])
    cfg = build_config(args)
    assert (cfg.count, cfg.seed, cfg.sigma, cfg.filtering) == (5, 3, 0.2, False)
    assert os.path.isabs(cfg.out)


def test_config_unknown_key(tmp_path):
    with pytest.raises(UsageError, match="unknown key"):
        parse_config_text("colour = red\n")
    with pytest.raises(UsageError):
        parse_config_text("count\n")
    cfgfile = tmp_path / "bad.cfg"
    cfgfile.write_text("bogus = 1\n")
    assert run("gen-data", "--config", cfgfile, "--out", tmp_path / "d") == 1


def test_invalid_values_are_usage_errors(tmp_path):
    assert run("gen-data", "--curved-fraction", 2, "--out", tmp_path / "d") == 1
    assert run("gen-data", "--labeled-ratio", -1, "--out", tmp_path / "d") == 1


def test_format_round_trip():
    cfg = RunConfig(count=3, filtering=False, out="/x")
    assert parse_config_text(format_config(cfg)) == {k: getattr(cfg, k) for k in parse_config_text(format_config(cfg))}
    assert RunConfig(**parse_config_text(format_config(cfg))) == cfg


def pipeline(root):
    d, m = root / "d", root / "m"
    steps = [
        ("gen-data", "--count", 6, "--labeled-ratio", 0.5, "--seed", 4, "--out", d),
        ("train-sasn", "--data", d, "--epochs", 1, "--out", m / "sasn.bin"),
        ("gen-pseudo", "--data", d, "--model", m / "sasn.bin", "--out", root / "dp"),
        ("train-detector", "--data", root / "dp", "--source", "pseudo", "--epochs", 1, "--out", m / "det.bin"),
        ("dst", "--data", d, "--model", m / "det.bin", "--epochs", 1, "--out", m / "dst.bin"),
        ("eval", "--model", m / "dst.bin", "--data", d, "--out", m / "metrics.json"),
        ("visualize", "--data", root / "dp", "--layer", "pseudo", "--out", root / "viz"),
        ("visualize", "--data", root / "dp", "--layer", "supervision", "--out", root / "viz2"),
    ]
    return [run(*s) for s in steps]


def test_pipeline_and_determinism(tmp_path):
    root = tmp_path / "run"
    assert pipeline(root) == [0] * 8
    first = files_of(root)
    assert json.loads((root / "m" / "metrics.json").read_text()).keys() >= {"fscore"}
    load_dataset(root / "dp")
    for p in root.rglob("*"):
        if p.is_file():
            p.unlink()
    assert pipeline(root) == [0] * 8
    assert files_of(root) == first


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sbp", "nope"], capture_output=True, text=True)
    assert r.returncode == 1
    env = dict(os.environ, SBP_LOG="info")
    cmd = [sys.executable, "-m", "sbp", "gen-data", "--count", "1", "--out", str(tmp_path / "d")]
    r = subprocess.run(cmd, capture_output=True, text=True, env=env)
    assert r.returncode == 0
