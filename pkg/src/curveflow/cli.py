"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 solver failure, 3 audit failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .app import (
    EXIT_AUDIT,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SOLVER,
    audit,
    convergence_problem_config,
    convergence_study,
    run,
    tolerance_study,
)
from .config import ConfigError, RunConfig


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curveflow", description="Gradient flows of closed planar curves.")
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--grid", type=int, help="number of grid points (overrides the config)")
    p.add_argument("--tol", type=float, help="local error tolerance sigma (overrides the config)")
    p.add_argument("--t-end", type=float, dest="t_end", help="final time (overrides the config)")
    p.add_argument("--study", choices=("convergence", "tolerance"), help="run a refinement or tolerance study")
    p.add_argument("--grids", type=_ints, default=[50, 100, 200, 400, 800], help="comma-separated grids for --study convergence")
    p.add_argument("--sigmas", type=_floats, default=[1e-3, 1e-4, 1e-5, 1e-6], help="comma-separated tolerances for --study tolerance")
    p.add_argument("--audit", action="store_true", help="run the invariant battery")
    p.add_argument("--perp-sign", type=int, choices=(1, -1), default=1, help=argparse.SUPPRESS)
    p.add_argument("--plot", action="store_true", help="render PNG figures next to the CSV output (needs matplotlib)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(args: argparse.Namespace) -> RunConfig:
    if args.config is None:
        if args.study is None:
            raise ConfigError("--config is required for a run")
        cfg = convergence_problem_config()
    else:
        cfg = RunConfig.load(args.config)
    return cfg.with_overrides(grid=args.grid, sigma=args.tol, t_end=args.t_end, out=str(args.out) if args.out else None)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.audit:
        out = args.out or Path("audit_out")
        ok, results = audit(out, perp_sign=args.perp_sign)
        for r in results:
            print(r.line())
        print(f"audit {'passed' if ok else 'FAILED'}; report in {out / 'audit.json'}")
        return EXIT_OK if ok else EXIT_AUDIT

    try:
        cfg = _load(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)

    try:
        if args.study == "convergence":
            rep = convergence_study(cfg, args.grids, out)
            for i, d in enumerate(rep.differences):
                print(f"N={rep.grids[i]} vs {rep.grids[i + 1]}: max difference {d:.4e}")
            print("ratios: " + ", ".join(f"{r:.2f}" for r in rep.ratios))
            if args.plot:
                _plot(lambda m: m.plot_convergence(out / "convergence.csv", out / "convergence.png"))
            return EXIT_OK if all(r.status == "completed" for r in rep.runs) else EXIT_SOLVER
        if args.study == "tolerance":
            rep = tolerance_study(cfg, args.sigmas, cfg.grid, out)
            for s, a in zip(rep.sigmas, rep.accepted):
                print(f"sigma={s:.0e}: {a} accepted attempts")
            print("growth per decade: " + ", ".join(f"{g:.2f}" for g in rep.growth))
            return EXIT_OK if all(r.status == "completed" for r in rep.runs) else EXIT_SOLVER
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    result = run(cfg, out)
    if result.exit_code == EXIT_CONFIG:
        print(f"config error: {result.summary.get('reason')}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{result.status}: {result.summary.get('trace_rows', 0)} steps, output in {out}")
    if result.exit_code == EXIT_SOLVER:
        print(f"solver failure: {result.summary.get('reason')}", file=sys.stderr)
    if args.plot:
        _plot(lambda m: m.plot_run(out))
    return result.exit_code


def _plot(action) -> None:
    try:
        from . import plotting
    except ImportError:  # pragma: no cover - depends on the environment
        print("plotting needs matplotlib (pip install 'artifact[plot]'); skipped", file=sys.stderr)
        return
    try:
        action(plotting)
    except ImportError:
        print("plotting needs matplotlib (pip install 'artifact[plot]'); skipped", file=sys.stderr)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
