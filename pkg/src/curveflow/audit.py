"""Invariant battery: refinement studies, gradient oracles and the Jacobian check.

Every check returns a :class:`CheckResult` carrying the measured numbers so
callers (the CLI audit and the acceptance tests) can print and judge them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .energy import (
    ChaParams,
    FacetingParams,
    PerimeterPenalty,
    TwoPointKernel,
    canham_helfrich_density,
    cha_energy_of_positions,
    extrinsic_gradient_cha,
    first_order_energy_of_positions,
    random_polynomial_density,
    twopoint_fields,
)
from .flow import FlowModel, first_integral_residual, local_gradient
from .geometry import ClosedCurve, CurveFrame, build_curve, circle, compute_frame, perp, resample_scaled_arclength
from .solver import DaeState, Layout, NewtonSettings, assemble_jacobian, assemble_residual, uses_mu_fields
from .variation import (
    ExtrinsicVelocity,
    IntrinsicField,
    M_adjoint_apply,
    M_apply,
    constraint_basis,
    inner,
    inner_ext,
    rigid_body_generators,
)

ORDER_BAND = (1.7, 2.3)
ROUNDOFF = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.detail}"


# ---------------------------------------------------------------------------
# curve families


def trefoil(n: int, amplitude: float = 0.1) -> ClosedCurve:
    """Three-lobed polar curve in scaled arc length."""
    return resample_scaled_arclength(build_curve({"kind": "polar", "n": n, "modes": [[3, amplitude]]}))


def round_circle(n: int) -> ClosedCurve:
    return circle(1.0, n)


def lopsided(n: int) -> ClosedCurve:
    """Curve with no rotational or mirror symmetry.

    Symmetric curves make some two-point rigid products vanish identically or
    converge spectrally, which hides the second-order quadrature error.
    """
    return resample_scaled_arclength(build_curve({"kind": "polar", "n": n, "modes": [[3, 0.3], [2, 0.1, 0.7]]}))


CURVE_FAMILIES: dict[str, Callable[[int], ClosedCurve]] = {
    "circle": round_circle,
    "trefoil": trefoil,
    "lopsided": lopsided,
}
TWOPOINT_GRIDS = (256, 512, 1024)


def broken_frame(frame: CurveFrame) -> CurveFrame:
    """Frame whose normal uses the opposite rotation while curvature keeps its sign (negative control)."""
    return replace(frame, normal=perp(frame.tangent, -1))


def _frame(curve: ClosedCurve, perp_sign: int) -> CurveFrame:
    frame = compute_frame(curve)
    return frame if perp_sign == 1 else broken_frame(frame)


def observed_orders(errors: Sequence[float]) -> list[float]:
    """log2 of successive error ratios under grid doubling."""
    e = np.asarray(errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return [float(x) for x in np.log2(e[:-1] / e[1:])]


def judge_refinement(name: str, errors: Sequence[float], scale: float = 1.0, band=ORDER_BAND) -> CheckResult:
    """Pass when every observed order lies in ``band``, or when all errors are at round-off level.

    Quantities integrated by the trapezoid rule over smooth periodic
    integrands can converge faster than second order; for those callers pass
    an open upper bound.
    """
    errors = [float(x) for x in errors]
    if max(errors) <= ROUNDOFF * max(scale, 1.0):
        return CheckResult(name, True, {"errors": errors, "orders": []}, f"exact to round-off (max {max(errors):.2e})")
    orders = observed_orders(errors)
    ok = all(band[0] <= o <= band[1] for o in orders)
    detail = "errors " + ", ".join(f"{x:.3e}" for x in errors) + "; orders " + ", ".join(f"{o:.2f}" for o in orders)
    return CheckResult(name, ok, {"errors": errors, "orders": orders}, detail)


# ---------------------------------------------------------------------------
# operator identities


def rigid_generator_errors(family: str, grids: Sequence[int], perp_sign: int = 1) -> dict[int, list[float]]:
    """Max norm of ``M`` applied to each rigid generator, per grid."""
    out: dict[int, list[float]] = {0: [], 1: [], 2: []}
    for n in grids:
        curve = CURVE_FAMILIES[family](n)
        frame = _frame(curve, perp_sign)
        for i, gen in enumerate(rigid_body_generators(frame, curve)):
            out[i].append(M_apply(frame, curve.length, gen).max_abs())
    return out


def adjoint_constraint_errors(family: str, grids: Sequence[int], perp_sign: int = 1) -> dict[int, list[float]]:
    """Max norm of ``M_adjoint`` applied to each closure-constraint gradient."""
    out: dict[int, list[float]] = {0: [], 1: [], 2: []}
    for n in grids:
        curve = CURVE_FAMILIES[family](n)
        frame = _frame(curve, perp_sign)
        for i, psi in enumerate(constraint_basis(frame, curve.length).as_list()):
            out[i].append(M_adjoint_apply(frame, curve.length, psi).max_abs())
    return out


def smooth_velocity(n: int, rng: np.random.Generator, modes: int = 4) -> ExtrinsicVelocity:
    """Random trigonometric normal and tangential speeds with decaying coefficients."""
    s = np.arange(n) / n
    parts = []
    for _ in range(2):
        f = np.zeros(n)
        for m in range(1, modes + 1):
            f += (rng.standard_normal() * np.cos(2 * np.pi * m * s) + rng.standard_normal() * np.sin(2 * np.pi * m * s)) / m**2
        parts.append(f)
    return ExtrinsicVelocity(*parts)


def smooth_intrinsic(n: int, rng: np.random.Generator, modes: int = 4) -> IntrinsicField:
    v = smooth_velocity(n, rng, modes)
    return IntrinsicField(v.vn, v.vtau)


def adjointness_study(family: str, grids: Sequence[int], seed: int = 0, perp_sign: int = 1) -> dict[str, list[float]]:
    """Discrete adjointness gap and the pairing value on each grid.

    The test functions are fixed smooth functions of the parameter, so the
    pairing converges to a grid-independent limit as the grid is refined.
    """
    gaps, values = [], []
    for n in grids:
        curve = CURVE_FAMILIES[family](n)
        frame = _frame(curve, perp_sign)
        length = curve.length
        v = smooth_velocity(n, np.random.default_rng(seed))
        phi = smooth_intrinsic(n, np.random.default_rng(seed + 1))
        lhs = inner(M_apply(frame, length, v), phi, length)
        rhs = inner_ext(v, M_adjoint_apply(frame, length, phi), length)
        gaps.append(abs(lhs - rhs) / max(abs(lhs), 1.0))
        values.append(lhs)
    return {"gap": gaps, "value": values}


def first_integral_errors(family: str, grids: Sequence[int], perp_sign: int = 1) -> dict[str, list[float]]:
    densities = {
        "canham_helfrich": canham_helfrich_density(0.7),
        "faceting": FacetingParams(0.3, 0.0, 2.0, 1.0).density(),
        "polynomial": random_polynomial_density(3),
    }
    out: dict[str, list[float]] = {k: [] for k in densities}
    for n in grids:
        curve = CURVE_FAMILIES[family](n)
        frame = _frame(curve, perp_sign)
        for name, dens in densities.items():
            out[name].append(float(np.max(np.abs(first_integral_residual(frame, curve.length, dens)))))
    return out


def twopoint_rigid_products(family: str, grids: Sequence[int], kernel: TwoPointKernel, perp_sign: int = 1) -> dict[int, list[float]]:
    """Inner products of the two-point extrinsic gradient with the rigid generators."""
    out: dict[int, list[float]] = {0: [], 1: [], 2: []}
    for n in grids:
        curve = CURVE_FAMILIES[family](n)
        frame = _frame(curve, perp_sign)
        length = curve.length
        force, dens = twopoint_fields(curve, frame, length, kernel, "brute")
        grad = ExtrinsicVelocity(np.einsum("ij,ij->i", force, frame.normal) + frame.kappa * dens, np.zeros(n))
        for i, gen in enumerate(rigid_body_generators(frame, curve)):
            out[i].append(abs(inner_ext(grad, gen, length)))
    return out


# ---------------------------------------------------------------------------
# gradient oracles


@dataclass(frozen=True)
class OracleCase:
    name: str
    n: int
    energy: Callable[[np.ndarray], float]
    pairing: Callable[[CurveFrame, float, ExtrinsicVelocity], float]
    gradient_norm: Callable[[CurveFrame, float], float]


def _local_case(name: str, model: FlowModel, curve: ClosedCurve) -> OracleCase:
    dens, pen = model.local_density(), model.perimeter()

    def pairing(frame: CurveFrame, length: float, vel: ExtrinsicVelocity) -> float:
        return inner(local_gradient(frame, length, model), M_apply(frame, length, vel), length)

    def gnorm(frame: CurveFrame, length: float) -> float:
        g = local_gradient(frame, length, model)
        return math.sqrt(inner(g, g, length))

    return OracleCase(name, curve.n_points, lambda x: first_order_energy_of_positions(x, dens, pen), pairing, gnorm)


def _cha_case(params: ChaParams, curve: ClosedCurve) -> OracleCase:
    def pairing(frame: CurveFrame, length: float, vel: ExtrinsicVelocity) -> float:
        return inner_ext(extrinsic_gradient_cha(curve, frame, length, params), vel, length)

    def gnorm(frame: CurveFrame, length: float) -> float:
        g = extrinsic_gradient_cha(curve, frame, length, params)
        return math.sqrt(inner_ext(g, g, length))

    return OracleCase("cha", curve.n_points, lambda x: cha_energy_of_positions(x, params), pairing, gnorm)


def default_oracle_cases(local_n: int = 8192, cha_n: int = 1024) -> list[tuple[OracleCase, ClosedCurve]]:
    """CH, faceting, adhesion and one random polynomial density on a smooth three-lobed curve."""
    cl = trefoil(local_n, 0.2)
    cc = trefoil(cha_n, 0.2)
    length = cl.length
    ch = FlowModel.canham_helfrich(0.7)
    fac = FlowModel.faceting_model(FacetingParams(0.3, 2.0, 2.0, 0.9 * length))
    gen = FlowModel.generic_model(random_polynomial_density(3), PerimeterPenalty(1.0, 0.9 * length))
    cha = ChaParams(TwoPointKernel(10.0, 0.25, 1.0), 0.1, 1.0, 1.5, 0.9 * cc.length)
    return [
        (_local_case("canham_helfrich", ch, cl), cl),
        (_local_case("faceting", fac, cl), cl),
        (_local_case("polynomial", gen, cl), cl),
        (_cha_case(cha, cc), cc),
    ]


def gradient_oracle(
    case: OracleCase,
    curve: ClosedCurve,
    n_velocities: int = 20,
    deltas: Sequence[float] = tuple(10.0 ** -np.arange(1.0, 6.5, 0.5)),
    seed: int = 0,
) -> dict[str, list[float]]:
    """Centered FD of the energy along random displacements vs the analytic pairing.

    Returns per velocity: the error at the best step (relative to |pairing|
    and to ``|grad| |v|``) and the observed order in the step from a halving
    ladder at the coarsest step.
    """
    frame = compute_frame(curve)
    length = curve.length
    x0 = curve.positions
    gnorm = case.gradient_norm(frame, length)
    rel_exact, rel_norm, order = [], [], []
    for i in range(n_velocities):
        vel = smooth_velocity(curve.n_points, np.random.default_rng(seed + i))
        disp = vel.displacement(frame)
        exact = case.pairing(frame, length, vel)
        scale = gnorm * math.sqrt(inner_ext(vel, vel, length))

        def fd(d: float) -> float:
            return (case.energy(x0 + d * disp) - case.energy(x0 - d * disp)) / (2.0 * d)

        errs = [abs(fd(d) - exact) for d in deltas]
        best = min(errs)
        rel_exact.append(best / abs(exact))
        rel_norm.append(best / scale)
        d0 = 1e-3
        f1, f2, f3 = fd(d0), fd(d0 / 2), fd(d0 / 4)
        order.append(math.log2(abs((f1 - f2) / (f2 - f3))))
    return {"rel_exact": rel_exact, "rel_norm": rel_norm, "order": order}


# ---------------------------------------------------------------------------
# Jacobian


def jacobian_fd_check(
    model: FlowModel, n: int = 32, seed: int = 0, perturbation: float = 1e-7, k: float = 1e-2
) -> float:
    """Largest column-relative mismatch between the analytic Jacobian and centered FD.

    The state is a smooth curve with random algebraic fields, randomly
    perturbed away from the previous time level.
    """
    rng = np.random.default_rng(seed)
    curve = resample_scaled_arclength(build_curve({"kind": "polar", "n": n, "modes": [[3, 0.1, 0.2], [2, 0.05, 0.0]]}))
    lay = Layout(n, uses_mu_fields(model))
    base = np.concatenate(
        [curve.positions[:, 0], curve.positions[:, 1], rng.standard_normal((lay.nfields - 2) * n), [curve.length]]
    )
    prev = DaeState.unpack(base, n, lay.with_mu)
    z = base + 1e-2 * rng.standard_normal(lay.size)
    trial = DaeState.unpack(z, n, lay.with_mu)
    jac = assemble_jacobian(prev, trial, k, model, NewtonSettings(jacobian_mode="full")).toarray()
    worst = 0.0
    for j in range(lay.size):
        e = np.zeros(lay.size)
        e[j] = perturbation
        plus = assemble_residual(prev, DaeState.unpack(z + e, n, lay.with_mu), k, model)
        minus = assemble_residual(prev, DaeState.unpack(z - e, n, lay.with_mu), k, model)
        col = (plus - minus) / (2.0 * perturbation)
        worst = max(worst, float(np.max(np.abs(col - jac[:, j])) / max(1.0, np.max(np.abs(jac[:, j])))))
    return worst


def jacobian_models(gauge: str = "zero_mean_tangential") -> dict[str, FlowModel]:
    return {
        "canham_helfrich": FlowModel.canham_helfrich(0.5, gauge=gauge),
        "faceting": FlowModel.faceting_model(FacetingParams(0.3, 1.0, 2.0, 7.0), gauge=gauge),
        "polynomial": FlowModel.generic_model(random_polynomial_density(3), PerimeterPenalty(0.5, 6.0), gauge=gauge),
        "cha": FlowModel.cha_model(ChaParams(TwoPointKernel(0.5, 0.3), 0.1, 1.0, 1.2, 6.0), gauge=gauge),
    }


# ---------------------------------------------------------------------------
# battery


def run_battery(perp_sign: int = 1, quick: bool = False) -> list[CheckResult]:
    """All invariant checks on the default curve family.

    ``perp_sign=-1`` flips the rotation used for the normal while keeping the
    curvature sign; the geometric identities must then fail.
    """
    grids = [128, 256, 512]
    results: list[CheckResult] = []
    for fam in ("circle", "trefoil"):
        gen = rigid_generator_errors(fam, grids, perp_sign)
        for i, name in enumerate(("translation x", "translation y", "rotation")):
            results.append(judge_refinement(f"{fam}: M on {name}", gen[i]))
        adj = adjoint_constraint_errors(fam, grids, perp_sign)
        for i in range(3):
            results.append(judge_refinement(f"{fam}: M_adjoint on closure gradient {i + 1}", adj[i]))
        study = adjointness_study(fam, grids, perp_sign=perp_sign)
        gap = max(study["gap"])
        results.append(CheckResult(f"{fam}: adjointness gap", gap <= ROUNDOFF, {"gap": study["gap"]}, f"max {gap:.2e}"))
        vals = study["value"]
        diffs = [abs(vals[i] - vals[i + 1]) for i in range(len(vals) - 1)]
        results.append(judge_refinement(f"{fam}: pairing value increments", diffs, abs(vals[-1])))
        fi = first_integral_errors(fam, grids, perp_sign)
        for dname, errs in fi.items():
            results.append(judge_refinement(f"{fam}: first-integral residual ({dname})", errs))
    tp = twopoint_rigid_products("lopsided", TWOPOINT_GRIDS, TwoPointKernel(10.0, 0.5, 1.0), perp_sign)
    for i in range(3):
        results.append(judge_refinement(f"lopsided: two-point gradient vs rigid generator {i + 1}", tp[i]))
    if perp_sign == 1:
        for name, model in jacobian_models().items():
            err = jacobian_fd_check(model, n=32)
            results.append(CheckResult(f"Jacobian FD check ({name})", err <= 1e-6, {"error": err}, f"max rel {err:.2e}"))
        cases = default_oracle_cases()
        for case, curve in cases:
            res = gradient_oracle(case, curve, n_velocities=3 if quick else 20)
            worst = max(res["rel_norm"])
            orders = res["order"]
            ok = worst <= 1e-5 and all(1.7 <= o <= 2.3 for o in orders)
            results.append(
                CheckResult(
                    f"gradient oracle ({case.name})",
                    ok,
                    {"worst": worst, "orders": orders},
                    f"worst rel error {worst:.2e} (vs |pairing|: {max(res['rel_exact']):.2e}); "
                    f"delta orders {min(orders):.2f}..{max(orders):.2f}",
                )
            )
    return results
