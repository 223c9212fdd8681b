import json
import subprocess
import sys

import pytest

from koopsoc.cli import main, parse_seeds
from koopsoc.experiment import TrainedBundle, builtin_config_names, read_config

SMALL = {
    "model": "elu-hw",
    "training": {
        "num_trajectories": 10,
        "steps_per_trajectory": 50,
        "excitation": {"cov": 0.2, "trunc": 2.0},
        "seed": 1,
    },
    "cost": {"Q": 1.0, "R": 1.0},
    "simulation": {"horizon": 20, "seeds": [1, 2]},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture
def bundle_path(tmp_path, trained_bundle):
    path = tmp_path / "model.json"
    trained_bundle.save(path)
    return path


@pytest.mark.parametrize(
    "text, seeds",
    [("7", [7]), ("1..4", [1, 2, 3, 4]), ("1,3", [1, 3]), ("1..3,8", [1, 2, 3, 8])],
)
def test_parse_seeds(text, seeds):
    assert parse_seeds(text) == seeds


def test_builtin_config_is_valid():
    assert "elu-hw" in builtin_config_names()
    assert read_config("elu-hw")["simulation"]["horizon"] == 1000


def test_missing_field_exits_2_and_names_it(tmp_path, capsys):
    cfg = json.loads(json.dumps(SMALL))
    del cfg["training"]["excitation"]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "m.json")]) == 2
    err = capsys.readouterr().err
    assert "training/excitation: missing required field" in err


def test_malformed_json_reports_line(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "model": "elu-hw",\n  "training": {,\n}\n')
    assert main(["compare", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_unknown_model_is_config_error(tmp_path, capsys):
    cfg = dict(SMALL, model="no-such-model")
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "m.json")]) == 2


def test_train_writes_bundle(tmp_path, small_config, capsys):
    out = tmp_path / "model.json"
    assert main(["train", "--config", str(small_config), "--out", str(out)]) == 0
    bundle = TrainedBundle.load(out)
    assert bundle.soc_gain.K.shape == (1, 10)
    assert bundle.predictor.A.shape == (10, 10)
    assert bundle.num_samples == 500
    assert "diagnostics" in json.loads(out.read_text())["soc_gain"]
    assert "wrote" in capsys.readouterr().out


def test_simulate_twice_gives_identical_files(tmp_path, bundle_path):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        argv = ["simulate", "--model", str(bundle_path), "--controller", "soc-lqr",
                "--seeds", "7", "--horizon", "10", "--out", str(out)]
        assert main(argv) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert set(outputs[0]) == {"trace_soc-lqr_seed7.csv", "summary_soc-lqr.json"}
    assert outputs[0] == outputs[1]
    lines = outputs[0]["trace_soc-lqr_seed7.csv"].decode().splitlines()
    assert len(lines) == 12


def test_simulate_ce_controller(tmp_path, bundle_path):
    out = tmp_path / "ce"
    assert main(["simulate", "--model", str(bundle_path), "--controller", "ce-lqr",
                 "--seeds", "1,2", "--horizon", "15", "--out", str(out)]) == 0
    summary = json.loads((out / "summary_ce-lqr.json").read_text())
    assert summary["seeds"] == [1, 2] and len(summary["per_seed"]) == 2


def test_simulate_missing_bundle(tmp_path):
    assert main(["simulate", "--model", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_compare_small_config(tmp_path, small_config, capsys):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(small_config), "--out", str(out), "--traces", "--plots"]) == 0
    data = json.loads((out / "comparison.json").read_text())
    assert data["seeds"] == [1, 2]
    assert (out / "model.json").exists()
    assert (out / "trace_ce-lqr_seed1.csv").exists() and (out / "trace_soc-lqr_seed2.csv").exists()
    assert (out / "sumx_trace.svg").exists()
    printed = capsys.readouterr().out
    assert "Achieved cost" in printed and "epsilon" in printed


def test_check_command(capsys):
    assert main(["check"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("[PASS]") for line in lines)


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "koopsoc.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "simulate" in proc.stdout
