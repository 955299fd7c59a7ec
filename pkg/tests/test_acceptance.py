"""Acceptance suite: one verdict line per criterion, printed in the terminal summary.

Slow simulations carry the ``slow`` marker; ``pytest -m "not slow"`` skips them.
"""

from __future__ import annotations

import numpy as np
import pytest

from curveflow.app import convergence_problem_config, convergence_study, tolerance_study
from curveflow.audit import (
    ORDER_BAND,
    adjoint_constraint_errors,
    adjointness_study,
    default_oracle_cases,
    first_integral_errors,
    gradient_oracle,
    jacobian_fd_check,
    jacobian_models,
    judge_refinement,
    rigid_generator_errors,
    twopoint_rigid_products,
)
from curveflow.config import RunConfig
from curveflow.energy import TwoPointKernel, double_well, near_contact_dstar
from curveflow.flow import FlowModel, FrontConfiguration, build_front_state, front_count, heteroclinic_derivatives
from curveflow.geometry import build_curve, min_pair_distance
from curveflow.solver import NewtonSettings, StepController, adaptive_advance, init_state

OPERATOR_GRIDS = [128, 256, 512]
TWOPOINT_GRIDS = [256, 512, 1024, 2048]
RATIO_BAND = (3.2, 5.2)
GROWTH_BAND = (2.5, 4.0)


# ---------------------------------------------------------------------------
# 1, 2: convergence and step-count studies


@pytest.mark.slow
@pytest.mark.parametrize("velocity_form", ["gradient", "appendix"])
def test_spatial_convergence(velocity_form, criterion, tmp_path):
    cfg = convergence_problem_config(velocity_form=velocity_form)
    rep = convergence_study(cfg, [50, 100, 200, 400, 800], tmp_path)
    ok = len(rep.ratios) == 3 and all(RATIO_BAND[0] <= r <= RATIO_BAND[1] for r in rep.ratios)
    measured = (
        f"{velocity_form} form: differences "
        + ", ".join(f"{d:.3e}" for d in rep.differences)
        + "; ratios "
        + ", ".join(f"{r:.2f}" for r in rep.ratios)
    )
    assert criterion(1, "spatial convergence at grid doubling", ok, measured, f"ratios in {list(RATIO_BAND)}")


@pytest.mark.slow
def test_step_count_scaling(criterion, tmp_path):
    rep = tolerance_study(convergence_problem_config(), (1e-3, 1e-4, 1e-5, 1e-6), grid=100, out=tmp_path)
    ok = all(GROWTH_BAND[0] <= g <= GROWTH_BAND[1] for g in rep.growth)
    measured = (
        "accepted attempts "
        + "/".join(str(a) for a in rep.accepted)
        + "; growth per decade "
        + ", ".join(f"{g:.2f}" for g in rep.growth)
    )
    assert criterion(2, "adaptive step count per tolerance decade", ok, measured, f"in {list(GROWTH_BAND)}")


# ---------------------------------------------------------------------------
# 3: gradient oracles


@pytest.mark.parametrize("index", range(4), ids=["canham_helfrich", "faceting", "polynomial", "cha"])
def test_gradient_oracles(index, criterion):
    case, curve = default_oracle_cases()[index]
    res = gradient_oracle(case, curve, n_velocities=20)
    worst = max(res["rel_norm"])
    orders = res["order"]
    ok = worst <= 1e-5 and all(ORDER_BAND[0] <= o <= ORDER_BAND[1] for o in orders)
    measured = (
        f"{case.name}: worst error / (|grad| |v|) {worst:.2e}, worst error / |pairing| {max(res['rel_exact']):.2e}, "
        f"step orders {min(orders):.3f}..{max(orders):.3f}"
    )
    assert criterion(3, "energy derivative vs gradient pairing", ok, measured, f"<= 1e-5, order in {list(ORDER_BAND)}")


# ---------------------------------------------------------------------------
# 4: operator identities


@pytest.mark.parametrize("family", ["circle", "trefoil"])
def test_operator_identities(family, criterion):
    checks = []
    gen = rigid_generator_errors(family, OPERATOR_GRIDS)
    for i, name in enumerate(("x-translation", "y-translation", "rotation")):
        checks.append(judge_refinement(f"M on {name}", gen[i]))
    adj = adjoint_constraint_errors(family, OPERATOR_GRIDS)
    for i in range(3):
        checks.append(judge_refinement(f"M_adjoint on closure gradient {i + 1}", adj[i]))
    study = adjointness_study(family, OPERATOR_GRIDS)
    checks.append(judge_refinement("adjointness gap", study["gap"]))
    vals = study["value"]
    checks.append(judge_refinement("pairing increments", [abs(a - b) for a, b in zip(vals, vals[1:])], abs(vals[-1])))
    for name, errs in first_integral_errors(family, OPERATOR_GRIDS).items():
        checks.append(judge_refinement(f"first integral ({name})", errs))
    ok = all(c.passed for c in checks)
    measured = f"{family}: " + "; ".join(f"{c.name} [{c.detail}]" for c in checks)
    assert criterion(4, "operator identities under refinement", ok, measured, f"orders in {list(ORDER_BAND)} or round-off")


# ---------------------------------------------------------------------------
# 5: dissipation


def test_dissipation_matches_energy_decay(criterion):
    model = FlowModel.canham_helfrich(0.5)
    state = init_state(build_curve({"kind": "polar", "n": 64, "modes": [[2, 0.2]]}), model)
    traj = adaptive_advance(state, 0.2, StepController(k=1e-6, sigma=1e-5), model, NewtonSettings())
    pts = traj.points[1:]
    energies = [p.diagnostics.energy for p in traj.points]
    monotone = all(b <= a for a, b in zip(energies, energies[1:]))
    small = [p for p in pts if p.dt < 1e-4]
    gaps = [abs(p.diagnostics.dissipation_obs / p.diagnostics.dissipation_pred - 1.0) for p in small]
    ok = traj.status == "completed" and monotone and len(small) >= 10 and max(gaps) <= 0.10
    measured = (
        f"{len(pts)} accepted steps, energy monotone={monotone}, {len(small)} steps with dt < 1e-4, "
        f"worst relative mismatch {max(gaps):.2%}"
    )
    assert criterion(5, "dissipation identity on a relaxing circle", ok, measured, "<= 10% once dt < 1e-4")


# ---------------------------------------------------------------------------
# 6: two-point rigid-motion invariants


def test_twopoint_rigid_products(criterion):
    products = twopoint_rigid_products("lopsided", TWOPOINT_GRIDS, TwoPointKernel(10.0, 0.5, 1.0))
    checks = [judge_refinement(name, products[i]) for i, name in enumerate(("x-translation", "y-translation", "rotation"))]
    ok = all(c.passed for c in checks)
    measured = "; ".join(f"{c.name} [{c.detail}]" for c in checks)
    assert criterion(6, "two-point gradient against rigid motions", ok, measured, f"orders in {list(ORDER_BAND)}")


# ---------------------------------------------------------------------------
# 7: near-contact distance of a fold

FOLD_CONFIG = {
    "schema_version": 1,
    "model": {"kind": "cha", "a0": 40.0, "ell_star": 0.01, "a": 1.0, "beta": 60.0, "rho": 1.3, "epsilon": 0.08},
    "shape": {"kind": "crenelated", "lobes": 13, "amplitude": 0.05},
    "grid": 300,
    "t_end": 2.5,
    "sigma": 1e-4,
    "k0": 1e-8,
    "stop_at_equilibrium": True,
}


@pytest.mark.slow
def test_fold_separation(criterion):
    cfg = RunConfig.from_dict(FOLD_CONFIG)
    curve = cfg.initial_curve()
    model = cfg.flow_model(curve.length)
    state = init_state(curve, model)
    traj = adaptive_advance(
        state, cfg.t_end, cfg.controller(), model, cfg.newton(), stop_at_equilibrium=True, diagnostics=False
    )
    ell_star = FOLD_CONFIG["model"]["ell_star"]
    target = near_contact_dstar(1.0)
    sep = min_pair_distance(traj.final.state.curve()) / ell_star
    ok = traj.status == "equilibrium" and abs(sep / target - 1.0) <= 0.2
    measured = f"status {traj.status} at t={traj.final.t:.4g}; separation / ell_star {sep:.3f} vs {target:.3f}"
    assert criterion(7, "fold sheet separation", ok, measured, "within 20%")


# ---------------------------------------------------------------------------
# 8: faceting coarsening

FACET_CONFIG = {
    "schema_version": 1,
    "model": {"kind": "faceting", "alpha": 0.1, "beta": 5.0, "kappa_star": 5.0},
    "shape": {"kind": "crenelated", "lobes": 13, "amplitude": 0.05},
    "grid": 300,
    "t_end": 0.135,
    "sigma": 1e-4,
    "k0": 1e-7,
}
SETTLE_STEPS = 20  # front count must hold this long before events are counted
EVENT_WINDOW = 20  # accepted steps on each side of a front-count drop
SPIKE_FACTOR = 3.0
STEP_DROP = 0.01


def _coarsening_events(fronts, r_kappa, energy):
    """Front-count drops after the start-up transient, each judged for a
    residual spike and an energy stair-step across a window of accepted steps."""
    settled = None
    run = 0
    for i in range(1, len(fronts)):
        run = run + 1 if fronts[i] == fronts[i - 1] else 0
        if run >= SETTLE_STEPS:
            settled = i
            break
    events = []
    if settled is None:
        return events
    for i in range(settled + 1, len(fronts)):
        if fronts[i] < fronts[i - 1]:
            lo, hi = max(0, i - EVENT_WINDOW), min(len(fronts) - 1, i + EVENT_WINDOW)
            baseline = r_kappa[lo]
            spike = max(r_kappa[lo : hi + 1]) / baseline
            drop = (energy[lo] - energy[hi]) / energy[lo]
            events.append({"index": i, "fronts": (fronts[i - 1], fronts[i]), "spike": spike, "drop": drop})
    return events


@pytest.mark.slow
def test_faceting_coarsening(criterion):
    cfg = RunConfig.from_dict(FACET_CONFIG)
    curve = cfg.initial_curve()
    model = cfg.flow_model(curve.length)
    kstar = FACET_CONFIG["model"]["kappa_star"]
    fronts, r_kappa, energy = [], [], []

    def record(point):
        fronts.append(front_count(point.state.kappa, kstar))
        r_kappa.append(point.diagnostics.r_kappa_norm)
        energy.append(point.diagnostics.energy)

    traj = adaptive_advance(init_state(curve, model), cfg.t_end, cfg.controller(), model, cfg.newton(), callback=record)
    events = _coarsening_events(fronts, r_kappa, energy)
    sharp = [e for e in events if e["spike"] >= SPIKE_FACTOR and e["drop"] >= STEP_DROP]
    closure = traj.final.diagnostics.closure[1]
    final_fronts = fronts[-1]
    ok = (
        traj.status == "completed"
        and len(events) >= 2
        and len(sharp) == len(events)
        and abs(closure) <= 1e-3
        and final_fronts % 2 == 0
    )
    desc = ", ".join(f"{a}->{b} (spike x{e['spike']:.1f}, drop {e['drop']:.1%})" for e in events for a, b in [e["fronts"]])
    measured = (
        f"{len(events)} events [{desc}]; final fronts {final_fronts}; "
        f"curvature integral - 2 pi = {closure:.2e}"
    )
    assert criterion(
        8,
        "faceting coarsening",
        ok,
        measured,
        f">= 2 events each with spike >= x{SPIKE_FACTOR:g} and drop >= {STEP_DROP:.0%}; |closure| <= 1e-3; even fronts",
    )


# ---------------------------------------------------------------------------
# 9: heteroclinic fronts

FRONT_POSITIONS = (0.1, 0.3, 0.45, 0.7)
BLEND_WIDTH = 0.08


def test_heteroclinic_fronts(criterion):
    alpha, kstar = 0.1, 5.0
    n, length = 2048, 2.0
    sigma = length * (np.arange(n) / n - 0.5)
    psi, _, ddpsi = heteroclinic_derivatives(alpha, kstar, 1.0, sigma)
    residual = float(np.max(np.abs(alpha**2 * ddpsi - double_well(psi, kstar)[1])))
    rk, rg = [], []
    for a in (0.2, 0.1, 0.05):
        st = build_front_state(FrontConfiguration(FRONT_POSITIONS, a, BLEND_WIDTH / a, kstar), 2**18)
        rk.append(st.r_kappa_norm)
        rg.append(st.r_g_norm)
    monotone = rk[0] > rk[1] > rk[2] and rg[0] > rg[1] > rg[2]
    ok = residual <= 1e-8 and monotone
    measured = (
        f"profile residual {residual:.1e}; R_kappa " + ", ".join(f"{x:.2e}" for x in rk)
        + "; R_g " + ", ".join(f"{x:.2e}" for x in rg)
    )
    assert criterion(9, "heteroclinic profile and front residuals", ok, measured, "<= 1e-8; decreasing in alpha")


# ---------------------------------------------------------------------------
# 10: Jacobian gate


@pytest.mark.parametrize("gauge", ["zero_mean_tangential", "comoving"])
def test_jacobian_gate(gauge, criterion):
    errors = {name: jacobian_fd_check(model, n=32) for name, model in jacobian_models(gauge).items()}
    worst = max(errors.values())
    measured = f"{gauge}: " + ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
    assert criterion(10, "analytic Jacobian vs finite differences", worst <= 1e-6, measured, "<= 1e-6 per column")

