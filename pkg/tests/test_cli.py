"""Config parsing, output files and exit codes of the command-line runner."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from symlms.cli import PRESETS, main, parse_config, preset_config
from symlms.errors import ConfigError
from symlms.simgen import Laplacian, Schedule

SMALL = {
    "name": "small",
    "seed": 5,
    "horizon": 3000,
    "trials": 2,
    "system": {"L": 2, "D": 1, "theta": [[1.0], [3.0]]},
    "noise": {"kind": "gaussian", "sigma": 0.1},
    "filters": [
        {"mode": "sym-scalar", "eps": 1e-3, "init": [[0.0], [1.0]], "invert_every": 500},
        {"mode": "rem", "eps": 1e-3, "init": [[0.0], [2.0]], "invert_every": 500},
    ],
}


def _write(tmp_path, cfg, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def test_example1_preset():
    spec = parse_config(preset_config("example1"))
    np.testing.assert_array_equal(spec.system.theta_true[:, 0], [-2.0, 5.0, 8.0])
    assert (spec.system.L, spec.system.D, spec.horizon) == (3, 1, 200_000)
    assert spec.system.noise.sigma == 1e-2
    assert spec.filters[0].mode == "sym-scalar" and spec.filters[0].eps == 1e-4


def test_example4_preset():
    spec = parse_config(preset_config("example4"))
    assert (spec.system.L, spec.system.D, spec.trials, spec.horizon) == (4, 10, 100, 50_000)
    np.testing.assert_array_equal(spec.system.fixed_input, np.eye(10))


def test_example2_preset_laplacian_std_and_switch():
    spec = parse_config(preset_config("example2"))
    assert isinstance(spec.system.noise, Laplacian) and spec.system.noise.sigma == 2.0
    assert isinstance(spec.hyper, Schedule) and spec.hyper.breaks == (300_000,)
    assert spec.filters[0].mode == "rem" and spec.filters[0].eps == 5e-5


def test_all_presets_parse():
    for name in PRESETS:
        parse_config(preset_config(name))


def test_missing_seed_is_an_error():
    cfg = dict(SMALL)
    del cfg["seed"]
    with pytest.raises(ConfigError, match="seed"):
        parse_config(cfg)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="colour"):
        parse_config({**SMALL, "colour": "red"})
    with pytest.raises(ConfigError, match="noise"):
        parse_config({**SMALL, "noise": {"kind": "gaussian", "sigma": 1, "mean": 0}})


def test_theta_shape_checked():
    with pytest.raises(ConfigError, match="shape"):
        parse_config({**SMALL, "system": {"L": 3, "D": 1, "theta": [[1.0], [2.0]]}})


def test_parse_error_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("seed: 1\nsystem: {theta: [[1], [2]]\nhorizon: 5\n")
    assert main(["fit", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "line" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    assert main(["bogus"]) == 2
    assert main(["fit"]) == 2


def test_fit_outputs_and_log_rows(tmp_path):
    p = _write(tmp_path, SMALL)
    assert main(["fit", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["seed"] == 5 and len(summary["config_hash"]) == 16
    assert summary["n_trials"] == 2
    with open(tmp_path / "o" / "log_0-sym-scalar.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["k", "mode"]
    assert len(rows) - 1 == 3000 // 500 + 1
    assert [int(r[0]) for r in rows[1:]] == list(range(0, 3001, 500))
    # one row per (filter, trial) plus an aggregate per filter
    assert len(summary["rows"]) == 2 * 2 + 2


def test_identical_runs_produce_identical_files(tmp_path):
    p = _write(tmp_path, SMALL)
    for d in ("a", "b"):
        assert main(["fit", "--config", str(p), "--out", str(tmp_path / d)]) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    p = _write(tmp_path, SMALL)
    main(["fit", "--config", str(p), "--out", str(tmp_path / "a"), "--seed", "9"])
    assert json.loads((tmp_path / "a" / "summary.json").read_text())["seed"] == 9


def test_simulate_writes_trajectory(tmp_path):
    p = _write(tmp_path, {**SMALL, "horizon": 70_000})
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "s"), "--reveal"]) == 0
    lines = (tmp_path / "s" / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 70_001
    assert lines[0].split(",")[:5] == ["k", "psi", "y_1", "y_2", "perm"]
    assert lines[-1].split(",")[0] == "70000"


def test_analyze_reports_closed_form(tmp_path, capsys):
    p = _write(tmp_path, SMALL)
    assert main(["analyze", "--config", str(p), "--out", str(tmp_path / "a"), "--samples", "2000"]) == 0
    rep = json.loads((tmp_path / "a" / "analysis.json").read_text())
    assert rep["covariance"]["trace_bar"] == pytest.approx(0.150025)
    assert rep["covariance"]["trace_bar_with_cross"] == pytest.approx(0.090025)


def test_reproduce_example3(tmp_path, capsys):
    assert main(["reproduce", "example3", "--out", str(tmp_path / "r")]) == 0
    out = capsys.readouterr().out
    assert "[PASS] example3" in out
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    ghost = np.array(summary["estimates"]["naive"])
    np.testing.assert_allclose(ghost, [[-2.0, 5.0], [4.0, 6.0]], atol=0.1)
    assert summary["pass"] is True


def test_reproduce_target_miss_exit_code(tmp_path):
    # the tracking ratio check misses its band, so the run exits 1
    assert main(["reproduce", "tracking", "--out", str(tmp_path / "t"), "--trials", "2"]) == 1


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "symlms", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "reproduce" in r.stdout
