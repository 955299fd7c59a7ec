"""Simulation runs, convergence and step-count studies, and the invariant audit."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import audit as audit_checks
from .config import ConfigError, RunConfig
from .flow import front_count
from .geometry import resample_scaled_arclength
from .solver import DaeState, StepController, Trajectory, TrajectoryPoint, adaptive_advance, init_state

logger = logging.getLogger(__name__)

SUMMARY_SCHEMA_VERSION = 1
TRACE_COLUMNS = (
    "t",
    "dt",
    "energy",
    "dissipation_pred",
    "dissipation_obs",
    "r_kappa_norm",
    "closure_theta",
    "min_pair_distance",
)
SNAPSHOT_COLUMNS = ("s", "x", "y", "kappa", "vn")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_AUDIT = 0, 1, 2, 3


@dataclass
class RunResult:
    status: str
    exit_code: int
    out_dir: Path
    trajectory: Trajectory | None
    snapshots: list[Path] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)


def write_snapshot(path: Path, state: DaeState) -> None:
    n = state.n
    table = np.column_stack([np.arange(n) / n, state.x, state.y, state.kappa, state.v])
    np.savetxt(path, table, delimiter=",", header=",".join(SNAPSHOT_COLUMNS), comments="", fmt="%.17g")


def _trace_row(point: TrajectoryPoint) -> list[float]:
    d = point.diagnostics
    return [point.t, point.dt, d.energy, d.dissipation_pred, d.dissipation_obs, d.r_kappa_norm, d.closure[1], d.min_pair_distance]


class _RunWriter:
    """Streams trace rows and snapshots while the solver advances."""

    def __init__(self, out: Path, cfg: RunConfig) -> None:
        self.out = out
        self.cfg = cfg
        self.snapshots: list[Path] = []
        self.rows = 0
        self.accepted = 0
        self._next_time = cfg.snapshot_interval
        self._fh = open(out / "trace.csv", "w", newline="")
        self._csv = csv.writer(self._fh)
        self._csv.writerow(TRACE_COLUMNS)
        self._snapped_at = -1
        self.first: TrajectoryPoint | None = None
        self.last: TrajectoryPoint | None = None

    def snapshot(self, state: DaeState) -> None:
        path = self.out / f"snap_{len(self.snapshots)}.csv"
        write_snapshot(path, state)
        self.snapshots.append(path)
        self._snapped_at = self.accepted

    def __call__(self, point: TrajectoryPoint) -> None:
        if self.first is None:
            self.first = point
            self.snapshot(point.state)
            return
        self.last = point
        self.accepted += 1
        self._csv.writerow([f"{x:.17g}" for x in _trace_row(point)])
        self.rows += 1
        if self._next_time is None:
            due = self.accepted % self.cfg.snapshot_every == 0
        else:
            due = point.t >= self._next_time - 1e-15
            while point.t >= self._next_time - 1e-15:
                self._next_time += self.cfg.snapshot_interval
        if due:
            self.snapshot(point.state)

    def close(self) -> None:
        self._fh.close()
        # the final state is always on disk
        if self.last is not None and self._snapped_at != self.accepted:
            self.snapshot(self.last.state)


def _diag_dict(point: TrajectoryPoint | None) -> dict[str, Any] | None:
    if point is None or point.diagnostics is None:
        return None
    d = point.diagnostics
    return {
        "t": point.t,
        "energy": d.energy,
        "r_kappa_norm": d.r_kappa_norm,
        "r_g_norm": d.r_g_norm,
        "closure_tau": list(d.closure[0]),
        "closure_theta": d.closure[1],
        "min_pair_distance": d.min_pair_distance,
        "vn_max": d.vn_max,
    }


def run(cfg: RunConfig, out_dir: str | Path | None = None) -> RunResult:
    """Integrate one configuration and write snapshots, trace and summary."""
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        curve = cfg.initial_curve()
        curve = resample_scaled_arclength(curve)
        model = cfg.flow_model(curve.length)
        controller = cfg.controller()
        settings = cfg.newton()
    except (ConfigError, ValueError) as exc:
        return _config_failure(out, cfg, str(exc))

    writer = _RunWriter(out, cfg)
    started = time.perf_counter()
    failure: str | None = None
    traj: Trajectory | None = None
    try:
        state0 = init_state(curve, model, resample=False, settings=settings)
        traj = adaptive_advance(
            state0,
            cfg.t_end,
            controller,
            model,
            settings,
            callback=writer,
            stop_at_equilibrium=cfg.stop_at_equilibrium,
        )
    except Exception as exc:  # noqa: BLE001 - any solver breakdown becomes a failure record
        failure = f"{type(exc).__name__}: {exc}"
        logger.exception("solver aborted")
    final_state = writer.last.state if writer.last else (writer.first.state if writer.first else None)
    writer.close()

    status = traj.status if traj is not None else "failed"
    reason = failure or (traj.reason if traj is not None else "")
    ok = status in ("completed", "equilibrium")
    summary: dict[str, Any] = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "status": status,
        "reason": reason,
        "model": cfg.model.get("kind"),
        "grid": cfg.grid,
        "t_end": cfg.t_end,
        "t_final": writer.last.t if writer.last else 0.0,
        "accepted_attempts": traj.accepted if traj else writer.accepted,
        "time_steps": traj.time_steps if traj else 2 * writer.accepted,
        "rejected_attempts": traj.rejected if traj else 0,
        "newton_failures": traj.newton_failures if traj else 0,
        "equilibrium_time": traj.equilibrium_time if traj else None,
        "trace_rows": writer.rows,
        "snapshots": [p.name for p in writer.snapshots],
        "initial": _diag_dict(writer.first),
        "final": _diag_dict(writer.last or writer.first),
        "wall_seconds": time.perf_counter() - started,
        "config": cfg.to_dict(),
    }
    if final_state is not None:
        summary["final_length"] = float(final_state.length)
        if model.kind == "faceting":
            summary["front_count"] = front_count(final_state.kappa, model.faceting.kappa_star)
    (out / "run_summary.json").write_text(json.dumps(summary, indent=2, default=_json_default))
    return RunResult(status, EXIT_OK if ok else EXIT_SOLVER, out, traj, writer.snapshots, summary)


def _json_default(obj: Any) -> Any:
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _config_failure(out: Path, cfg: RunConfig, message: str) -> RunResult:
    summary = {"schema_version": SUMMARY_SCHEMA_VERSION, "status": "config_error", "reason": message}
    (out / "run_summary.json").write_text(json.dumps(summary, indent=2))
    return RunResult("config_error", EXIT_CONFIG, out, None, [], summary)


# ---------------------------------------------------------------------------
# studies


@dataclass
class GridRun:
    n: int
    status: str
    positions: np.ndarray | None
    accepted: int
    time_steps: int
    seconds: float


def _final_state(cfg: RunConfig, n: int, sigma: float) -> GridRun:
    grid_cfg = cfg.with_overrides(grid=n, sigma=sigma)
    started = time.perf_counter()
    try:
        curve = resample_scaled_arclength(grid_cfg.initial_curve())
        model = grid_cfg.flow_model(curve.length)
        settings = grid_cfg.newton()
        state0 = init_state(curve, model, resample=False, settings=settings)
        traj = adaptive_advance(state0, grid_cfg.t_end, grid_cfg.controller(), model, settings, diagnostics=False)
    except Exception as exc:  # noqa: BLE001
        logger.warning("grid %d failed: %s", n, exc)
        return GridRun(n, "failed", None, 0, 0, time.perf_counter() - started)
    ok = traj.status == "completed"
    return GridRun(
        n, traj.status, traj.final.state.positions if ok else None, traj.accepted, traj.time_steps, time.perf_counter() - started
    )


@dataclass
class ConvergenceReport:
    grids: list[int]
    differences: list[float]
    ratios: list[float]
    runs: list[GridRun]


def convergence_study(cfg: RunConfig, grids: Sequence[int] = (50, 100, 200, 400, 800), out: Path | None = None) -> ConvergenceReport:
    """Max-norm position differences between successive grid doublings at ``t_end``.

    Node ``j`` of a grid coincides in the parameter with node ``2j`` of the
    doubled grid, so the comparison uses every second node of the finer grid.
    """
    grids = sorted(int(n) for n in grids)
    if len(grids) < 2:
        raise ConfigError("a convergence study needs at least two grids")
    for a, b in zip(grids, grids[1:]):
        if b != 2 * a:
            raise ConfigError("grids must be successive doublings")
    runs = [_final_state(cfg, n, cfg.sigma) for n in grids]
    diffs: list[float] = []
    for coarse, fine in zip(runs, runs[1:]):
        if coarse.positions is None or fine.positions is None:
            diffs.append(math.nan)
        else:
            diffs.append(float(np.max(np.abs(fine.positions[::2] - coarse.positions))))
    ratios = [diffs[i] / diffs[i + 1] for i in range(len(diffs) - 1)]
    report = ConvergenceReport(grids, diffs, ratios, runs)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "convergence.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n_coarse", "n_fine", "max_difference", "ratio", "status"])
            for i, d in enumerate(diffs):
                ratio = diffs[i - 1] / d if i > 0 else math.nan
                status = "ok" if math.isfinite(d) else "failed"
                w.writerow([grids[i], grids[i + 1], f"{d:.6e}", f"{ratio:.4f}", status])
    return report


@dataclass
class ToleranceReport:
    sigmas: list[float]
    accepted: list[int]
    time_steps: list[int]
    growth: list[float]
    runs: list[GridRun]


def tolerance_study(
    cfg: RunConfig, sigmas: Sequence[float] = (1e-3, 1e-4, 1e-5, 1e-6), grid: int = 100, out: Path | None = None
) -> ToleranceReport:
    """Accepted step counts against the local error tolerance on one grid."""
    sigmas = [float(s) for s in sigmas]
    if len(sigmas) < 2:
        raise ConfigError("a tolerance study needs at least two tolerances")
    runs = [_final_state(cfg, grid, s) for s in sigmas]
    accepted = [r.accepted for r in runs]
    steps = [r.time_steps for r in runs]
    growth = []
    for i in range(len(runs) - 1):
        decades = math.log10(sigmas[i] / sigmas[i + 1])
        ok = runs[i].status == "completed" and runs[i + 1].status == "completed" and accepted[i] > 0
        growth.append((accepted[i + 1] / accepted[i]) ** (1.0 / decades) if ok else math.nan)
    report = ToleranceReport(sigmas, accepted, steps, growth, runs)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "tolerance.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "accepted_attempts", "time_steps", "growth_per_decade", "status"])
            for i, r in enumerate(runs):
                g = growth[i - 1] if i > 0 else math.nan
                w.writerow([f"{sigmas[i]:.1e}", accepted[i], steps[i], f"{g:.4f}", r.status])
    return report


def convergence_problem_config(grid: int = 100, velocity_form: str = "gradient", **kw: Any) -> RunConfig:
    """Adhesion flow from ``r = 1 + 0.35 cos 3 theta`` used for the refinement and tolerance studies."""
    base = dict(
        model={"kind": "cha", "a0": 10.0, "ell_star": 0.5, "a": 1.0, "epsilon": 0.1, "beta": 1.0, "rho": 1.5},
        shape={"kind": "polar", "r0": 1.0, "modes": [[3, 0.35]]},
        grid=grid,
        t_end=0.1,
        sigma=1e-4,
        k0=1e-4,
        velocity_form=velocity_form,
    )
    base.update(kw)
    return RunConfig(**base)


# ---------------------------------------------------------------------------
# audit


def audit(out: Path | None = None, perp_sign: int = 1, quick: bool = False) -> tuple[bool, list[audit_checks.CheckResult]]:
    results = audit_checks.run_battery(perp_sign=perp_sign, quick=quick)
    ok = all(r.passed for r in results)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        report = {
            "schema_version": SUMMARY_SCHEMA_VERSION,
            "perp_sign": perp_sign,
            "passed": ok,
            "checks": [{"name": r.name, "passed": r.passed, "detail": r.detail, "measured": r.measured} for r in results],
        }
        (out / "audit.json").write_text(json.dumps(report, indent=2, default=_json_default))
    return ok, results


__all__ = [
    "EXIT_AUDIT",
    "EXIT_CONFIG",
    "EXIT_OK",
    "EXIT_SOLVER",
    "RunResult",
    "StepController",
    "audit",
    "convergence_problem_config",
    "convergence_study",
    "run",
    "tolerance_study",
]
