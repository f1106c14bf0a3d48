import json
import math
import subprocess
import sys

import numpy as np
import pytest
import yaml

from reebmag import __version__
from reebmag.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main
from reebmag.config import load_config
from reebmag.errors import ConfigError
from reebmag.report import dumps

SMALL = {
    "seeds": [[0.0, 0.0, 0.0], [0.0, 0.0, 0.25]],
    "t_max": 1.5,
    "verify": {"grid": 4, "sphere_points": 50, "samples": 10, "energy_states": 2, "energy_horizon": 1.0},
}


def write_config(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def run(tmp_path, command, data, out="out", extra=()):
    path = write_config(tmp_path, data)
    code = main([command, "--config", str(path), "--out", str(tmp_path / out), *extra])
    report = tmp_path / out / f"{command}.json"
    return code, (json.loads(report.read_text()) if report.exists() else None)


def test_verify_passes_and_reports_provenance(tmp_path):
    code, report = run(tmp_path, "verify", SMALL)
    assert code == EXIT_OK
    assert report["status"] == "pass" and report["failing"] == []
    assert report["version"] == __version__
    assert report["config_hash"] == load_config(tmp_path / "cfg.yaml").hash
    names = {c["name"] for c in report["checks"]}
    assert {"reeb_residual", "class_g_certificate", "energy_drift", "reparametrized_magnetic_residual"} <= names


def test_verify_perturbed_flags_negative_control(tmp_path):
    code, report = run(tmp_path, "verify", {**SMALL, "perturbation": 0.3})
    assert code == EXIT_OK
    control = {c["name"]: c for c in report["checks"]}
    assert control["class_g_certificate"]["expected_failure"]
    assert control["class_g_certificate"]["passed"]
    neg = control["negative_control_reeb_residual"]
    assert neg["expected_failure"] and neg["passed"] and neg["value"] > 1e-3


@pytest.mark.parametrize(
    "data",
    [
        {"manifold": {"key": "klein-bottle"}},
        {"colour": "blue"},
        {"integrator": {"dt": -1.0}},
        {"integrator": {"stepsize": 0.1}},
        {"kappas": [0.5, -2.0]},
    ],
)
def test_config_errors_exit_2(tmp_path, data, capsys):
    code, report = run(tmp_path, "verify", data)
    assert code == EXIT_CONFIG and report is None
    assert "config error" in capsys.readouterr().err


def test_bad_yaml_exits_2(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("seeds: [1, 2\n")
    assert main(["verify", "--config", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["verify", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_flow_writes_csv(tmp_path):
    code, report = run(tmp_path, "flow", SMALL)
    assert code == EXIT_OK
    lines = (tmp_path / "out" / "flow.csv").read_text().splitlines()
    assert sum(1 for line in lines if line[:1].isdigit()) == 1001
    assert report["flow"]["rows"] == 1001
    assert report["flow"]["return_distance"] < 1e-8


def test_flow_drift_exits_1(tmp_path):
    data = {
        "bundle_metric": {"kind": "example-fourier"},
        "flow": {"kind": "magnetic", "q0": [0.1, 0.2, 0.3], "v0": [3.0, -2.0, 4.0]},
        "integrator": {"dt": 0.05, "max_time": 5.0, "drift_bound": 1e-9},
    }
    with pytest.warns(UserWarning, match="drift"):
        code, report = run(tmp_path, "flow", data)
    assert code == EXIT_FAIL and report["status"] == "fail"


def test_numerical_error_is_reported(tmp_path):
    data = {
        "bundle_metric": {"kind": "example-fourier"},
        "flow": {"kind": "magnetic", "q0": [0.1, 0.2, 0.3], "v0": [0.5, -0.4, 0.8]},
        "integrator": {"scheme": "rkf45", "tol": 1e-30, "min_dt": 1e-6},
    }
    code, report = run(tmp_path, "flow", data)
    assert code == EXIT_FAIL
    assert report["status"] == "error" and report["error"]["type"] == "IntegrationError"


def test_orbits_and_growth_commands(tmp_path):
    data = {**SMALL, "bundle_metric": {"kind": "example-fourier"}, "t_max": 2.0}
    code, report = run(tmp_path, "orbits", data)
    assert code == EXIT_OK and report["census"]["class_count"] == 2
    code, report = run(tmp_path, "growth", data)
    assert code == EXIT_OK and report["growth"]["verdict"] == "holds"


def test_mane_command(tmp_path):
    data = {**SMALL, "mane": {"degree": 1, "grid": 6, "betas": [10.0], "max_iter": 20}}
    code, report = run(tmp_path, "mane", data)
    assert code == EXIT_OK
    b = report["bracket"]
    assert b["lower"] == pytest.approx(0.5, abs=1e-8)
    assert b["lower"] <= b["upper"]


def test_runs_are_byte_identical(tmp_path):
    write_config(tmp_path, SMALL)
    for out in ("a", "b"):
        assert main(["verify", "--config", str(tmp_path / "cfg.yaml"), "--out", str(tmp_path / out), "--seed", "3"]) == 0
    assert (tmp_path / "a" / "verify.json").read_bytes() == (tmp_path / "b" / "verify.json").read_bytes()


def test_seed_changes_hash():
    assert load_config(seed=1).hash != load_config(seed=2).hash
    assert load_config(seed=1).hash == load_config(overrides={"seed": 1}).hash


def test_overrides_are_validated():
    with pytest.raises(ConfigError):
        load_config(overrides={"t_max": 0.0})
    cfg = load_config(overrides={"integrator": {"dt": 0.01}})
    assert cfg.integrator.dt == 0.01 and cfg.integrator.scheme == "rk4"


def test_dumps_special_values_and_order():
    text = dumps({"b": [math.nan, math.inf, -math.inf], "a": np.float64(0.1), "c": 2, "d": True})
    data = json.loads(text)
    assert list(data) == ["a", "b", "c", "d"]
    assert data["b"] == ["nan", "inf", "-inf"]
    assert data["a"] == 0.1 and data["c"] == 2 and data["d"] is True
    assert dumps(3.0) == "3.0"


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "reebmag.cli", "nonsense"], capture_output=True, text=True)
    assert proc.returncode == 2
