from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest

from curveflow.app import (
    EXIT_AUDIT,
    EXIT_CONFIG,
    EXIT_OK,
    SNAPSHOT_COLUMNS,
    SUMMARY_SCHEMA_VERSION,
    TRACE_COLUMNS,
    convergence_problem_config,
    convergence_study,
    run,
    tolerance_study,
)
from curveflow.cli import main
from curveflow.config import ConfigError, RunConfig

CH_ELLIPSE = {
    "schema_version": 1,
    "model": {"kind": "canham_helfrich", "beta": 1.0},
    "shape": {"kind": "polar", "modes": [[2, 0.2]]},
    "grid": 32,
    "t_end": 0.02,
    "sigma": 1e-4,
    "snapshot_every": 3,
}

TRIVIAL_CIRCLE = {
    "schema_version": 1,
    "model": {"kind": "canham_helfrich", "beta": 0.5},
    "shape": {"kind": "circle", "radius": 1.0},
    "grid": 64,
    "t_end": 100.0,
    "sigma": 1e-4,
    "k0": 1e-3,
    "stop_at_equilibrium": True,
}


def _write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**CH_ELLIPSE, "grid": 4})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**CH_ELLIPSE, "t_end": 0.0})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**CH_ELLIPSE, "schema_version": 2})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**CH_ELLIPSE, "colour": "red"})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**CH_ELLIPSE, "shape": {"kind": "file", "path": "/nonexistent.csv"}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**CH_ELLIPSE, "model": {"beta": 1.0}})


def test_model_block_errors():
    cfg = RunConfig.from_dict({**CH_ELLIPSE, "model": {"kind": "faceting", "alpha": 0.1}})
    with pytest.raises(ConfigError):
        cfg.flow_model(6.0)
    cfg = RunConfig.from_dict({**CH_ELLIPSE, "model": {"kind": "elastica"}})
    with pytest.raises(ConfigError):
        cfg.flow_model(6.0)


def test_defaults_take_initial_length():
    cfg = RunConfig.from_dict(
        {**CH_ELLIPSE, "model": {"kind": "cha", "a0": 10, "ell_star": 0.5, "epsilon": 0.1, "beta": 1, "rho": 1.5}}
    )
    model = cfg.flow_model(7.0)
    assert model.cha.target_length == pytest.approx(10.5)


def test_overrides_ignore_missing_values():
    cfg = RunConfig.from_dict(CH_ELLIPSE)
    assert cfg.with_overrides(grid=None, sigma=1e-6).sigma == 1e-6
    assert cfg.with_overrides(grid=None).grid == 32


def test_run_outputs(tmp_path):
    cfg = RunConfig.from_dict(CH_ELLIPSE)
    res = run(cfg, tmp_path / "out")
    assert res.exit_code == EXIT_OK
    out = res.out_dir
    trace = _rows(out / "trace.csv")
    assert tuple(trace[0]) == TRACE_COLUMNS
    accepted = res.summary["accepted_attempts"]
    # one trace row per accepted step
    assert len(trace) - 1 == accepted == res.summary["trace_rows"]
    snaps = sorted(out.glob("snap_*.csv"))
    indices = sorted(int(p.stem.split("_")[1]) for p in snaps)
    assert indices == list(range(len(snaps)))
    assert len(snaps) == 1 + accepted // 3 + (accepted % 3 != 0)
    first = _rows(out / "snap_0.csv")
    assert tuple(first[0]) == SNAPSHOT_COLUMNS
    assert len(first) - 1 == 32
    summary = json.loads((out / "run_summary.json").read_text())
    assert summary["schema_version"] == SUMMARY_SCHEMA_VERSION
    for key in ("status", "accepted_attempts", "time_steps", "rejected_attempts", "newton_failures", "initial", "final", "config"):
        assert key in summary
    assert summary["time_steps"] == 2 * accepted
    energies = [float(r[2]) for r in trace[1:]]
    assert all(b <= a for a, b in zip(energies, energies[1:]))


def test_snapshot_interval(tmp_path):
    cfg = RunConfig.from_dict({**CH_ELLIPSE, "snapshot_interval": 0.005})
    res = run(cfg, tmp_path / "out")
    times = [0.0] + [float(r[0]) for r in _rows(res.out_dir / "trace.csv")[1:]]
    # every crossing of a multiple of the interval yields one snapshot, plus initial and final
    assert 3 <= len(res.snapshots) <= 6
    assert times[-1] == pytest.approx(0.02)


def test_runs_are_deterministic(tmp_path):
    cfg = RunConfig.from_dict(CH_ELLIPSE)
    a = run(cfg, tmp_path / "a")
    b = run(cfg, tmp_path / "b")
    assert (a.out_dir / "trace.csv").read_bytes() == (b.out_dir / "trace.csv").read_bytes()
    for p in a.snapshots:
        assert p.read_bytes() == (b.out_dir / p.name).read_bytes()


def test_solver_failure_is_recorded(tmp_path):
    # a tolerance that forces the step size below its floor
    cfg = RunConfig.from_dict({**CH_ELLIPSE, "sigma": 1e-300, "k_min": 1e-6, "k0": 1e-5})
    res = run(cfg, tmp_path / "out")
    assert res.exit_code == 2
    summary = json.loads((res.out_dir / "run_summary.json").read_text())
    assert summary["status"] == "failed"
    assert summary["reason"]
    assert (res.out_dir / "snap_0.csv").exists()


def test_trivial_circle_is_stationary(tmp_path):
    res = run(RunConfig.from_dict(TRIVIAL_CIRCLE), tmp_path / "out")
    s = res.summary
    assert res.status == "equilibrium"
    # the polygonal circle is off the discrete equilibrium only by O(h^2)
    assert s["initial"]["vn_max"] < 2e-3
    assert abs(s["final_length"] - 2 * math.pi) < 2e-2
    assert s["final"]["vn_max"] < 1e-7
    # detection needs a full window of quiet steps after relaxation
    assert s["accepted_attempts"] >= 10


def test_single_grid_study_is_rejected():
    cfg = convergence_problem_config()
    with pytest.raises(ConfigError):
        convergence_study(cfg, [100])
    with pytest.raises(ConfigError):
        convergence_study(cfg, [50, 150])
    with pytest.raises(ConfigError):
        tolerance_study(cfg, [1e-4])


def test_small_convergence_study(tmp_path):
    # a cheap Canham-Helfrich refinement exercising the study plumbing
    cfg = RunConfig.from_dict({**CH_ELLIPSE, "t_end": 0.01, "sigma": 1e-6})
    rep = convergence_study(cfg, [16, 32, 64], tmp_path)
    assert len(rep.differences) == 2 and len(rep.ratios) == 1
    assert all(np.isfinite(rep.differences))
    assert rep.differences[1] < rep.differences[0]
    table = _rows(tmp_path / "convergence.csv")
    assert table[0] == ["n_coarse", "n_fine", "max_difference", "ratio", "status"]
    assert len(table) == 3


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    bad = _write(tmp_path, {**CH_ELLIPSE, "grid": 2}, "bad.json")
    assert main(["--config", str(bad)]) == EXIT_CONFIG
    assert main([]) == EXIT_CONFIG
    good = _write(tmp_path, CH_ELLIPSE)
    assert main(["--config", str(good), "--out", str(tmp_path / "run"), "--grid", "24"]) == EXIT_OK
    summary = json.loads((tmp_path / "run" / "run_summary.json").read_text())
    assert summary["grid"] == 24
    assert main(["--study", "convergence", "--grids", "100", "--out", str(tmp_path / "s")]) == EXIT_CONFIG


def test_cli_audit_negative_control(tmp_path, capsys):
    code = main(["--audit", "--perp-sign", "-1", "--out", str(tmp_path / "audit")])
    assert code == EXIT_AUDIT
    report = json.loads((tmp_path / "audit" / "audit.json").read_text())
    assert report["passed"] is False
    assert "FAIL" in capsys.readouterr().out
