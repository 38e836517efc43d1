import copy
import json
import subprocess
import sys
from pathlib import Path

import pytest

from conestab.cli import run_cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RBM = CONFIGS / "rbm_1d.json"


def write_config(tmp_path, **edits):
    raw = json.loads(RBM.read_text())
    raw = copy.deepcopy(raw)
    for dotted, value in edits.items():
        node = raw
        *head, last = dotted.split("__")
        for key in head:
            node = node[key]
        node[last] = value
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(raw))
    return p


def run(args, capsys):
    code = run_cli([str(a) for a in args])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_check_rbm_passes(capsys):
    code, out, _ = run(["check", "--config", RBM], capsys)
    assert code == 0
    data = json.loads(out)
    assert data["passed"] is True
    assert [c["pass"] for c in data["conditions"]] == [True, True, True]


def test_check_outward_drift_fails(tmp_path, capsys):
    cfg = write_config(tmp_path, model__drift={"type": "constant", "b": [1.0]})
    code, out, _ = run(["check", "--config", cfg], capsys)
    assert code == 3
    assert json.loads(out)["passed"] is False


def test_check_oblique_2d(capsys):
    code, out, _ = run(["check", "--config", CONFIGS / "oblique_2d.json"], capsys)
    assert code == 0, out


def test_usage_errors(capsys):
    assert run(["bogus", "--config", RBM], capsys)[0] == 1
    assert run(["sde"], capsys)[0] == 1
    assert run([], capsys)[0] == 1
    assert run(["sde", "--config", RBM, "--jobs", "0"], capsys)[0] == 1


def test_invalid_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"dimension": 1,,}')
    code, _, err = run(["check", "--config", p], capsys)
    assert code == 1 and "line 1" in err
    code, _, err = run(["check", "--config", tmp_path / "missing.json"], capsys)
    assert code == 1 and "cannot read" in err


def test_runtime_failure_exit_code(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        model__drift={"type": "expr", "exprs": ["exp(x0)"]},
        sim__x_list=[[50.0]],
        sim__h=0.5, sim__horizon=20.0, sim__burn_in=0.0, sim__n_paths=2,
    )
    code, _, err = run(["sde", "--config", cfg], capsys)
    assert code == 2


def test_project(capsys):
    code, out, _ = run(["project", "--config", RBM, "--point", "-2", "--velocity", "-1"], capsys)
    assert code == 0
    data = json.loads(out)
    assert data["phi"] == [0.0] and data["push"] == [2.0] and data["active_set"] == [0]
    assert data["velocity"]["projected"] == [0.0]
    assert run(["project", "--config", RBM, "--point", "1,2"], capsys)[0] == 1


def test_ode_writes_trace(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, sim__horizon=5.0, sim__burn_in=0.0, sim__x0=[3.0])
    code, _, _ = run(["ode", "--config", cfg, "--out", out], capsys)
    assert code == 0
    data = json.loads((out / "ode_summary.json").read_text())
    assert data["hitting"]["holds"] and data["envelope"]["holds"]
    assert data["hitting"]["time"] == pytest.approx(3.0, abs=0.011)
    lines = (out / "ode_trace.csv").read_text().splitlines()
    assert lines[0] == "t,x0,push_total"
    assert len(lines) == 502


def test_sde_outputs_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["sde", "--config", RBM, "--horizon", "20", "--paths", "4"]
    assert run(args + ["--out", a], capsys)[0] == 0
    assert run(args + ["--out", b, "--jobs", "3"], capsys)[0] == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["sde_summary.json", "trace_0.csv", "trace_1.csv"]
    for n in names:
        text = (a / n).read_bytes()
        assert text == (b / n).read_bytes()
        assert text.endswith(b"\n")
    header = (a / "trace_0.csv").read_text().splitlines()[0]
    assert header == "t,x0,push_total"
    summary = json.loads((a / "sde_summary.json").read_text())
    assert summary["command"] == "sde"


def test_seed_override_changes_output(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    run(["sde", "--config", RBM, "--horizon", "20", "--out", a], capsys)
    run(["sde", "--config", RBM, "--horizon", "20", "--out", b, "--seed", "8"], capsys)
    assert (a / "trace_0.csv").read_bytes() != (b / "trace_0.csv").read_bytes()


def test_hitting(capsys):
    code, out, _ = run(["hitting", "--config", RBM, "--paths", "20"], capsys)
    assert code == 0
    data = json.loads(out)
    means = [e["mean"] for e in data["estimates"]]
    assert means == sorted(means)
    assert all("T_bracket" in e for e in data["estimates"])


def test_invariant(capsys):
    code, out, _ = run(["invariant", "--config", RBM], capsys)
    assert code == 0
    data = json.loads(out)
    assert abs(data["mean"][0] - 0.5) < 0.2
    assert len(data["histogram"]["probabilities"]) == 10


def test_diagnose(capsys):
    code, out, _ = run(["diagnose", "--config", RBM, "--horizon", "20", "--paths", "4"], capsys)
    assert code == 0
    data = json.loads(out)
    assert data["drift"]["violations"] == 0
    assert data["exp_moment"]["passed"]
    assert data["tightness"][0]["max_frequency"] == 1.0


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "conestab", "check", "--config", str(RBM)],
        capture_output=True, text=True,
    )
    assert res.returncode == 0
    assert json.loads(res.stdout)["passed"] is True


def test_horizon_override_below_burn_in_is_rejected(capsys):
    code, _, err = run(["sde", "--config", RBM, "--horizon", "5"], capsys)
    assert code == 1 and "sim.burn_in" in err
