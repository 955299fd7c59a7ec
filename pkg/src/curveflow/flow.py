"""Gradient-flow normal velocities, gauges, diagnostics and front constructions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .energy import (
    ChaParams,
    FacetingParams,
    FirstOrderDensity,
    PerimeterPenalty,
    canham_helfrich_density,
    cha_energy,
    double_well,
    energy_first_order,
    intrinsic_gradient_first_order,
    intrinsic_hessian_apply_first_order,
    perimeter_hessian_apply,
    twopoint_fields,
)
from .geometry import (
    ClosedCurve,
    CurveFrame,
    closure_residual,
    compute_frame,
    d1,
    d2,
    integrate_surface,
    min_pair_distance,
)
from .variation import (
    ExtrinsicVelocity,
    IntrinsicField,
    M_adjoint_apply,
    M_apply,
    D_apply,
    helmholtz_apply,
)

ModelKind = Literal["canham_helfrich", "faceting", "cha", "generic"]
Gauge = Literal["zero_mean_tangential", "comoving"]
VelocityForm = Literal["gradient", "appendix"]

EQUILIBRIUM_SPEED = 1e-7
EQUILIBRIUM_WINDOW = 10


@dataclass(frozen=True)
class GenericParams:
    density: FirstOrderDensity
    perimeter: PerimeterPenalty = field(default_factory=PerimeterPenalty)


@dataclass(frozen=True)
class FlowModel:
    """One energy model plus the tangential gauge used to evolve it.

    ``velocity_form`` only matters for the adhesion model: ``gradient`` uses
    the bending term ``eps (Lap kappa + kappa^3 / 2)`` of the energy's
    gradient, ``appendix`` substitutes ``eps (kappa_ss - kappa^3)``.
    """

    kind: ModelKind
    beta: float = 0.0
    faceting: FacetingParams | None = None
    cha: ChaParams | None = None
    generic: GenericParams | None = None
    gauge: Gauge = "zero_mean_tangential"
    velocity_form: VelocityForm = "gradient"

    def __post_init__(self) -> None:
        present = {
            "canham_helfrich": True,
            "faceting": self.faceting is not None,
            "cha": self.cha is not None,
            "generic": self.generic is not None,
        }
        if self.kind not in present:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not present[self.kind]:
            raise ValueError(f"model kind {self.kind!r} needs its parameter block")
        if self.gauge not in ("zero_mean_tangential", "comoving"):
            raise ValueError(f"unknown gauge {self.gauge!r}")
        if self.velocity_form not in ("gradient", "appendix"):
            raise ValueError(f"unknown velocity form {self.velocity_form!r}")

    @classmethod
    def canham_helfrich(cls, beta: float, **kw) -> FlowModel:
        return cls("canham_helfrich", beta=beta, **kw)

    @classmethod
    def faceting_model(cls, params: FacetingParams, **kw) -> FlowModel:
        return cls("faceting", faceting=params, **kw)

    @classmethod
    def cha_model(cls, params: ChaParams, **kw) -> FlowModel:
        return cls("cha", cha=params, **kw)

    @classmethod
    def generic_model(cls, density: FirstOrderDensity, perimeter: PerimeterPenalty | None = None, **kw) -> FlowModel:
        return cls("generic", generic=GenericParams(density, perimeter or PerimeterPenalty()), **kw)

    def local_density(self) -> FirstOrderDensity:
        """First-order part of the energy (bending part for the adhesion model)."""
        if self.kind == "canham_helfrich":
            return canham_helfrich_density(self.beta)
        if self.kind == "faceting":
            return self.faceting.density()
        if self.kind == "cha":
            return canham_helfrich_density(0.0, self.cha.epsilon)
        return self.generic.density

    def perimeter(self) -> PerimeterPenalty:
        if self.kind == "faceting":
            return self.faceting.perimeter()
        if self.kind == "cha":
            return self.cha.perimeter()
        if self.kind == "generic":
            return self.generic.perimeter
        return PerimeterPenalty()


# ---------------------------------------------------------------------------
# velocities


def velocity_from_gradient(frame: CurveFrame, length: float, grad: IntrinsicField) -> np.ndarray:
    """Normal velocity ``-G dE/dkappa - g kappa dE/dg`` of an intrinsic gradient."""
    return -M_adjoint_apply(frame, length, grad).vn


def local_gradient(frame: CurveFrame, length: float, model: FlowModel) -> IntrinsicField:
    """Intrinsic gradient of the local energy part, perimeter penalty included."""
    grad = intrinsic_gradient_first_order(frame, length, model.local_density())
    tension = model.perimeter().tension(length)
    if tension != 0.0:
        grad = IntrinsicField(grad.dkappa, grad.dg + tension / length)
    return grad


def normal_velocity(
    frame: CurveFrame, length: float, model: FlowModel, curve: ClosedCurve | None = None
) -> np.ndarray:
    kappa = frame.kappa
    lap = d2(kappa) / length**2
    if model.kind == "canham_helfrich":
        return lap + 0.5 * kappa**3 - model.beta * kappa
    if model.kind == "faceting":
        p = model.faceting
        a2 = p.alpha**2
        w, wp, _ = double_well(kappa, p.kappa_star, p.well_scale)
        mu = -a2 * lap + wp
        grad = d1(kappa) / length
        return -helmholtz_apply(kappa, length, mu) - kappa * (
            -0.5 * a2 * grad**2 + w + p.perimeter().tension(length)
        )
    if model.kind == "cha":
        if curve is None:
            raise ValueError("the adhesion model needs curve positions")
        p = model.cha
        force, dens = twopoint_fields(curve, frame, length, p.kernel, p.twopoint_method)
        adhesion = np.einsum("ij,ij->i", force, frame.normal) + kappa * dens
        if model.velocity_form == "appendix":
            bending = p.epsilon * (lap - kappa**3)
        else:
            bending = p.epsilon * (lap + 0.5 * kappa**3)
        return bending - p.perimeter().tension(length) * kappa - adhesion
    return velocity_from_gradient(frame, length, local_gradient(frame, length, model))


def tangential_velocity(vn: np.ndarray, frame: CurveFrame, length: float, gauge: Gauge) -> np.ndarray:
    """Tangential speed keeping the parameterization in scaled arc length, with zero mean."""
    if gauge == "comoving":
        return np.zeros_like(vn)
    kappa = frame.kappa
    total = integrate_surface(vn * kappa, length)
    rhs = -kappa * vn + total / length
    vt = D_apply(rhs, length)
    return vt - np.mean(vt)


def dissipation_rate(vn: np.ndarray, length: float) -> float:
    return -integrate_surface(vn * vn, length)


def model_energy(curve: ClosedCurve, frame: CurveFrame, length: float, model: FlowModel) -> float:
    if model.kind == "cha":
        return cha_energy(curve, frame, length, model.cha)
    return energy_first_order(frame, length, model.local_density()) + model.perimeter().energy(length)


def first_integral_residual(frame: CurveFrame, length: float, density: FirstOrderDensity) -> np.ndarray:
    """``dE/dkappa * grad(kappa) - grad(g dE/dg)``; vanishes in the continuum on any curve."""
    grad = intrinsic_gradient_first_order(frame, length, density)
    return grad.dkappa * d1(frame.kappa) / length - d1(length * grad.dg) / length


def linearization_apply(
    frame: CurveFrame,
    length: float,
    density: FirstOrderDensity,
    u1: IntrinsicField,
    perimeter: PerimeterPenalty | None = None,
) -> IntrinsicField:
    """``-M M^dag H u1`` with ``H`` the intrinsic Hessian of the first-order energy."""
    hu = intrinsic_hessian_apply_first_order(frame, length, density, u1)
    if perimeter is not None and perimeter.beta != 0.0:
        hu = hu + perimeter_hessian_apply(length, perimeter, u1)
    v = M_adjoint_apply(frame, length, hu)
    return -1.0 * M_apply(frame, length, v)


# ---------------------------------------------------------------------------
# faceting fronts


def heteroclinic_rate(alpha: float, kappa_star: float, w0: float = 1.0) -> float:
    """Steepness ``lambda`` of the tanh front connecting the wells of the default double well."""
    return kappa_star * math.sqrt(w0) / (math.sqrt(2.0) * alpha)


def heteroclinic_profile(
    alpha: float,
    kappa_star: float,
    w0: float,
    s_grid: np.ndarray,
    *,
    length: float = 1.0,
    center: float | None = None,
    well: Callable[[np.ndarray], np.ndarray] | None = None,
    wells: tuple[float, float] | None = None,
    nu1: float = 0.0,
) -> np.ndarray:
    """Front rising from the lower well to the upper one, in arc length ``length * s``.

    With ``well=None`` the default double well gives the closed form
    ``kappa*/2 (1 + tanh(lambda (sigma - sigma0)))``.  A custom ``well``
    (callable ``W(psi)``) is handled by integrating the first integral
    ``alpha^2/2 psi'^2 = W(psi) + nu1 psi + nu2`` from the midpoint, with
    ``nu2`` chosen so the right-hand side vanishes at the lower well.
    """
    s = np.asarray(s_grid, dtype=float)
    if center is None:
        center = 0.5 * (s[0] + s[-1])
    sigma = length * (s - center)
    if well is None and nu1 == 0.0:
        lam = heteroclinic_rate(alpha, kappa_star, w0)
        return 0.5 * kappa_star * (1.0 + np.tanh(lam * sigma))
    fn = well if well is not None else (lambda q: double_well(q, kappa_star, w0)[0])
    lo, hi = wells if wells is not None else (0.0, kappa_star)
    nu2 = -float(fn(np.asarray(lo))) - nu1 * lo

    def rhs(_t: float, y: np.ndarray) -> np.ndarray:
        q = np.clip(y[0], lo, hi)
        val = 2.0 * (float(fn(np.asarray(q))) + nu1 * q + nu2)
        return np.array([math.sqrt(max(val, 0.0)) / alpha])

    mid = 0.5 * (lo + hi)
    out = np.empty_like(sigma)
    for sign, mask in ((1.0, sigma >= 0), (-1.0, sigma < 0)):
        pts = np.abs(sigma[mask])
        if pts.size == 0:
            continue
        order = np.argsort(pts)
        sol = solve_ivp(
            lambda t, y: sign * rhs(t, y),
            (0.0, float(pts[order][-1]) + 1e-12),
            [mid],
            t_eval=pts[order],
            rtol=1e-11,
            atol=1e-13,
        )
        vals = np.empty(pts.size)
        vals[order] = sol.y[0]
        out[mask] = vals
    return np.clip(out, lo, hi)


def heteroclinic_derivatives(alpha: float, kappa_star: float, w0: float, sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form profile and its first two arc-length derivatives at offsets ``sigma``."""
    lam = heteroclinic_rate(alpha, kappa_star, w0)
    t = np.tanh(lam * sigma)
    sech2 = 1.0 - t * t
    psi = 0.5 * kappa_star * (1.0 + t)
    dpsi = 0.5 * kappa_star * lam * sech2
    ddpsi = -kappa_star * lam * lam * t * sech2
    return psi, dpsi, ddpsi


def quintic_smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)


def mollified_front(alpha: float, kappa_star: float, w0: float, ell: float, sigma: np.ndarray) -> np.ndarray:
    """Front equal to the heteroclinic for ``|sigma| < alpha ell`` and to the wells beyond ``2 alpha ell``."""
    psi = heteroclinic_derivatives(alpha, kappa_star, w0, sigma)[0]
    width = alpha * ell
    right = quintic_smoothstep((sigma - width) / width)
    left = quintic_smoothstep((-sigma - width) / width)
    return (1.0 - right) * (1.0 - left) * psi + right * kappa_star


class FrontSpacingError(ValueError):
    """Fronts overlap or reach the ends of the parameter interval."""


@dataclass(frozen=True)
class FrontConfiguration:
    """Alternating up/down front positions ``p_1 < ... < p_2N`` in ``(0, 1)``."""

    positions: Sequence[float]
    alpha: float
    ell: float
    kappa_star: float
    well_scale: float = 1.0

    def __post_init__(self) -> None:
        p = np.asarray(self.positions, dtype=float)
        if p.ndim != 1 or p.size == 0 or p.size % 2:
            raise FrontSpacingError("front positions must be a non-empty list of even length")
        if np.any(np.diff(p) <= 0) or p[0] <= 0 or p[-1] >= 1:
            raise FrontSpacingError("front positions must increase strictly inside (0, 1)")


@dataclass(frozen=True)
class FrontState:
    kappa: np.ndarray
    length: float
    r_kappa: np.ndarray
    r_g: np.ndarray
    closure_tau: np.ndarray
    closure_kappa: float

    @property
    def r_kappa_norm(self) -> float:
        return float(np.max(np.abs(self.r_kappa)))

    @property
    def r_g_norm(self) -> float:
        return float(np.max(np.abs(self.r_g)))


def build_front_state(cfg: FrontConfiguration, n_grid: int, beta: float = 0.0) -> FrontState:
    """Curvature field of ``2N`` mollified fronts with total curvature exactly ``2 pi``.

    The length is fixed by the closure ``kappa* L sum(p_2i - p_2i-1) = 2 pi``,
    which holds exactly for the antisymmetric mollified profile; the
    reference length of the perimeter penalty is set to that length.
    """
    p = np.asarray(cfg.positions, dtype=float)
    plateau = float(np.sum(p[1::2] - p[0::2]))
    length = 2.0 * math.pi / (cfg.kappa_star * plateau)
    width = cfg.alpha * cfg.ell
    gaps = np.concatenate([[p[0]], np.diff(p), [1.0 - p[-1]]]) * length
    if np.any(gaps[1:-1] <= 4.0 * width):
        raise FrontSpacingError(f"front spacing {np.min(gaps[1:-1]):.4g} not above 4*alpha*ell = {4 * width:.4g}")
    if gaps[0] + gaps[-1] <= 4.0 * width or min(gaps[0], gaps[-1]) <= 2.0 * width:
        raise FrontSpacingError("fronts too close to the parameter origin")
    s = np.arange(n_grid) / n_grid
    kappa = np.zeros(n_grid)
    for i, pos in enumerate(p):
        sign = 1.0 if i % 2 == 0 else -1.0
        kappa += sign * mollified_front(cfg.alpha, cfg.kappa_star, cfg.well_scale, cfg.ell, length * (s - pos))
    a2 = cfg.alpha**2
    w, wp, _ = double_well(kappa, cfg.kappa_star, cfg.well_scale)
    grad = d1(kappa) / length
    r_kappa = -a2 * d2(kappa) / length**2 + wp
    r_g = -0.5 * a2 * grad**2 + w  # the perimeter term vanishes with L* = L
    theta = np.cumsum(np.concatenate([[0.0], 0.5 * (kappa[:-1] + kappa[1:])])) * (length / n_grid)
    tau = np.column_stack([np.cos(theta[:-1]), np.sin(theta[:-1])])
    frame_like = CurveFrame(tau, tau * 0.0, theta[:-1], kappa, length)
    tau_int, kappa_int = closure_residual(frame_like, length)
    return FrontState(kappa, length, r_kappa, r_g, tau_int, kappa_int)


def front_count(kappa: np.ndarray, kappa_star: float) -> int:
    """Number of periodic crossings of the mid-level ``kappa*/2``."""
    above = np.asarray(kappa) > 0.5 * kappa_star
    return int(np.sum(above != np.roll(above, 1)))


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class FlowDiagnostics:
    energy: float
    dissipation_pred: float
    dissipation_obs: float
    r_kappa_norm: float
    r_g_norm: float
    closure: tuple[tuple[float, float], float]
    min_pair_distance: float
    vn_max: float


def residual_norms(frame: CurveFrame, length: float, model: FlowModel) -> tuple[float, float]:
    """Max norms of the two intrinsic-gradient slots of the local energy.

    The adhesion model reports its bending part only (the two-point energy
    has no local intrinsic representation).
    """
    grad = local_gradient(frame, length, model)
    return float(np.max(np.abs(grad.dkappa))), float(np.max(np.abs(length * grad.dg)))


def compute_diagnostics(
    curve: ClosedCurve,
    model: FlowModel,
    *,
    frame: CurveFrame | None = None,
    vn: np.ndarray | None = None,
    prev_energy: float | None = None,
    dt: float | None = None,
    pair_exclusion: float | None = None,
) -> FlowDiagnostics:
    frame = frame or compute_frame(curve)
    length = curve.length
    if vn is None:
        vn = normal_velocity(frame, length, model, curve)
    energy = model_energy(curve, frame, length, model)
    obs = (energy - prev_energy) / dt if prev_energy is not None and dt else float("nan")
    rk, rg = residual_norms(frame, length, model)
    tau_int, kappa_int = closure_residual(frame, length)
    return FlowDiagnostics(
        energy=energy,
        dissipation_pred=dissipation_rate(vn, length),
        dissipation_obs=obs,
        r_kappa_norm=rk,
        r_g_norm=rg,
        closure=((float(tau_int[0]), float(tau_int[1])), float(kappa_int)),
        min_pair_distance=min_pair_distance(curve, pair_exclusion),
        vn_max=float(np.max(np.abs(vn))),
    )


def extrinsic_velocity(frame: CurveFrame, length: float, model: FlowModel, curve: ClosedCurve | None = None) -> ExtrinsicVelocity:
    vn = normal_velocity(frame, length, model, curve)
    return ExtrinsicVelocity(vn, tangential_velocity(vn, frame, length, model.gauge))
