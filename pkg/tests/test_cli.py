import json

import pytest

from rcmonitor import __version__
from rcmonitor.cli import RunConfig, CLIError, main

SMALL = """
seed = 3
months = ["202102"]
[paths]
workdir = "{workdir}"
[weighting]
schemes = ["uniform", "exp"]
[selection]
schemes = ["global"]
[synth]
n_shipments = 30
points_per_segment = 20
span_days = 50.0
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL.format(workdir=tmp_path / "run"))
    return path


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_deterministic(tmp_path, small_config, capsys):
    for d in ("a", "b"):
        code, _, _ = run(capsys, "simulate", "--config", str(small_config), "--seed", "7", "--out", str(tmp_path / d))
        assert code == 0
    for name in ("data.csv", "ground_truth.json", "effective_config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    echoed = json.loads((tmp_path / "a" / "effective_config.json").read_text())
    assert echoed["version"] == __version__ and echoed["config"]["seed"] == 7


def test_force_semantics(tmp_path, small_config, capsys):
    out = str(tmp_path / "sim")
    assert run(capsys, "simulate", "--config", str(small_config), "--out", out)[0] == 0
    code, _, err = run(capsys, "simulate", "--config", str(small_config), "--out", out)
    assert code == 1
    assert json.loads(err.strip())["error"] == "CLIError"
    assert run(capsys, "simulate", "--config", str(small_config), "--out", out, "--force")[0] == 0
    foreign = tmp_path / "foreign"
    foreign.mkdir()
    (foreign / "keep.txt").write_text("mine")
    code, _, err = run(capsys, "simulate", "--config", str(small_config), "--out", str(foreign), "--force")
    assert code == 1 and "not written by rcm" in err
    assert (foreign / "keep.txt").exists()


def test_unknown_config_key(tmp_path):
    with pytest.raises(CLIError, match="weighting.beta"):
        RunConfig.from_toml({"weighting": {"beta": 1}})
    with pytest.raises(CLIError, match="colour"):
        RunConfig.from_toml({"colour": 1})


def test_error_is_single_json_line(tmp_path, capsys):
    code, out, err = run(capsys, "tag", "--workdir", str(tmp_path), "--data", str(tmp_path / "missing.csv"))
    assert code == 1
    lines = err.strip().splitlines()
    assert len(lines) == 1
    doc = json.loads(lines[0])
    assert doc["command"] == "tag" and "missing.csv" in doc["message"]


def test_emit_schema(capsys):
    code, out, _ = run(capsys, "--emit-schema")
    assert code == 0
    doc = json.loads(out)
    assert len(doc["configs"]) == 6


def test_pipeline_and_hash_guard(tmp_path, small_config, capsys):
    cfg = str(small_config)
    for cmd in ("simulate", "tag", "split", "train", "evaluate"):
        code, _, err = run(capsys, cmd, "--config", cfg)
        assert code == 0, err
    code, out, _ = run(capsys, "report", "--config", cfg)
    assert code == 0
    assert "| YYYYMM | baseline | uniform/global | exp/global |" in out
    run_dir = tmp_path / "run"
    for sub in ("sim", "tagged", "splits", "models", "eval", "report"):
        assert (run_dir / sub / "effective_config.json").exists()
    assert (run_dir / "splits" / "split_202102.json").exists()
    assert json.loads((run_dir / "eval" / "audit.json").read_text())["lookahead_violations"] == 0
    assert (run_dir / "report" / "histogram_baseline_temperature.csv").exists()

    code, _, err = run(capsys, "evaluate", "--config", cfg, "--alpha", "0.5", "--out", str(tmp_path / "eval2"))
    assert code == 1
    doc = json.loads(err.strip())
    assert doc["error"] == "ConfigMismatchError"
    bundle = json.loads((run_dir / "models" / "202102" / "uniform-global" / "rcm_config.json").read_text())
    assert bundle["config_hash"] in doc["message"]
    assert doc["message"].count("vs") == 1
