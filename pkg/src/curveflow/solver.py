"""Implicit Euler time stepping of the curve flows as a differential-algebraic system.

Unknowns per time level, in order: positions ``x``, ``y``; curvature
``kappa``; its arc-length Laplacian ``kappa_ss``; for the first-order
energies with gradient terms also ``mu = dE/dkappa`` and its Laplacian
``mu_ss``; the normal velocity ``v``; and the total length ``L``.  That is
``5N + 1`` unknowns, or ``7N + 1`` with the ``mu`` fields.

Each step solves the nonlinear system with damped Newton iterations using the
analytic sparse Jacobian.  Time steps adapt by step doubling.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, gmres, splu

from .energy import (
    double_well,
    first_order_energy_general,
    kernel_eval,
    twopoint_field_derivatives,
    twopoint_fields_weighted,
    energy_twopoint_weighted,
    canham_helfrich_density,
)
from .flow import (
    EQUILIBRIUM_SPEED,
    EQUILIBRIUM_WINDOW,
    FlowDiagnostics,
    FlowModel,
    model_energy,
    normal_velocity,
    residual_norms,
)
from .geometry import (
    ClosedCurve,
    closure_residual,
    compute_frame,
    d2,
    min_pair_distance,
    resample_scaled_arclength,
)
from .jet import Jet, apply2, stack

logger = logging.getLogger(__name__)

JacobianMode = Literal["full", "frozen_twopoint"]
LinearSolver = Literal["krylov", "direct"]

# node half-width of the finite-difference stencils
STENCIL_WIDTH = 2
# relative linear residual still accepted from a GMRES solve that stalled
KRYLOV_ACCEPT = 1e-8


class StepFailure(RuntimeError):
    """Newton iteration for one time step did not converge."""

    def __init__(self, message: str, cause: str, residual: float = math.nan) -> None:
        super().__init__(message)
        self.cause = cause
        self.residual = residual


# ---------------------------------------------------------------------------
# state and settings


@dataclass(frozen=True)
class DaeState:
    x: np.ndarray
    y: np.ndarray
    kappa: np.ndarray
    kappa_ss: np.ndarray
    v: np.ndarray
    length: float
    mu: np.ndarray | None = None
    mu_ss: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def curve(self) -> ClosedCurve:
        return ClosedCurve(self.positions)

    def pack(self) -> np.ndarray:
        parts = [self.x, self.y, self.kappa, self.kappa_ss]
        if self.mu is not None:
            parts += [self.mu, self.mu_ss]
        return np.concatenate(parts + [self.v, [self.length]])

    @classmethod
    def unpack(cls, z: np.ndarray, n: int, with_mu: bool) -> DaeState:
        f = [z[i * n : (i + 1) * n].copy() for i in range(7 if with_mu else 5)]
        if with_mu:
            return cls(f[0], f[1], f[2], f[3], f[6], float(z[-1]), f[4], f[5])
        return cls(f[0], f[1], f[2], f[3], f[4], float(z[-1]))


@dataclass
class StepController:
    k: float
    sigma: float
    k_min: float = 1e-14
    k_max: float = 1.0
    growth_cap: float = 2.0
    shrink_floor: float = 0.2
    safety: float = 0.9

    def __post_init__(self) -> None:
        if not (0 < self.k_min <= self.k_max):
            raise ValueError("need 0 < k_min <= k_max")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        self.k = min(max(self.k, self.k_min), self.k_max)

    def factor(self, err: float) -> float:
        if err <= 0:
            return self.growth_cap
        return min(self.growth_cap, max(self.shrink_floor, self.safety * math.sqrt(self.sigma / err)))


@dataclass(frozen=True)
class NewtonSettings:
    tol: float = 1e-10
    max_iter: int = 25
    jacobian_mode: JacobianMode = "frozen_twopoint"
    max_halvings: int = 8
    # With two-point terms in frozen mode: "krylov" solves the exact Newton
    # system by GMRES preconditioned with the banded LU; "direct" uses the
    # banded matrix alone (a chord-like iteration that needs small steps).
    linear_solver: LinearSolver = "krylov"
    krylov_rtol: float = 1e-10

    def __post_init__(self) -> None:
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.jacobian_mode not in ("full", "frozen_twopoint"):
            raise ValueError(f"unknown jacobian mode {self.jacobian_mode!r}")
        if self.linear_solver not in ("krylov", "direct"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


def uses_mu_fields(model: FlowModel) -> bool:
    return model.kind in ("faceting", "generic")


@dataclass(frozen=True)
class Layout:
    n: int
    with_mu: bool

    @property
    def nfields(self) -> int:
        return 7 if self.with_mu else 5

    @property
    def size(self) -> int:
        return self.nfields * self.n + 1

    def start(self, name: str) -> int:
        order = ["x", "y", "kappa", "kappa_ss"] + (["mu", "mu_ss"] if self.with_mu else []) + ["v"]
        return order.index(name) * self.n

    def node_of(self, index: np.ndarray) -> np.ndarray:
        """Grid node of each unknown; ``-1`` for the length."""
        idx = np.asarray(index)
        return np.where(idx == self.size - 1, -1, idx % self.n)


# ---------------------------------------------------------------------------
# residual assembly


def _d1(f: Jet, n: int) -> Jet:
    return (f.roll(-1) - f.roll(1)) * (0.5 * n)


def _d2(f: Jet, n: int) -> Jet:
    return (f.roll(-1) - 2.0 * f + f.roll(1)) * float(n * n)


class _Metric:
    """Discrete arc-length calculus for the active gauge."""

    def __init__(self, gauge: str, x: Jet, y: Jet, length: Jet, n: int) -> None:
        self.n = n
        self.gauge = gauge
        self.dx, self.dy = _d1(x, n), _d1(y, n)
        self.ddx, self.ddy = _d2(x, n), _d2(y, n)
        self.speed = (self.dx * self.dx + self.dy * self.dy).sqrt()
        self.length_b = length.broadcast(n)
        if gauge == "comoving":
            ex, ey = x.roll(-1) - x, y.roll(-1) - y
            self.chord = (ex * ex + ey * ey).sqrt()
            self.weight = 0.5 * (self.chord + self.chord.roll(1))
            self.metric = self.speed
        else:
            self.chord = self.length_b * (1.0 / n)
            self.weight = self.chord
            self.metric = self.length_b
        self.normal_x = self.dy / self.speed
        self.normal_y = -self.dx / self.speed

    def grad(self, f: Jet) -> Jet:
        if self.gauge == "comoving":
            return (f.roll(-1) - f.roll(1)) / (2.0 * self.weight)
        return _d1(f, self.n) / self.length_b

    def lap(self, f: Jet) -> Jet:
        if self.gauge == "comoving":
            fwd = (f.roll(-1) - f) / self.chord
            return (fwd - fwd.roll(1)) / self.weight
        return _d2(f, self.n) / (self.length_b * self.length_b)

    def half_slope(self, f: Jet) -> Jet:
        """Slope between nodes ``j`` and ``j+1``."""
        return (f.roll(-1) - f) / self.chord

    def divergence(self, flux: Jet) -> Jet:
        """Compact divergence of a half-node flux."""
        return (flux - flux.roll(1)) / self.weight

    def curvature(self) -> Jet:
        cross = self.ddx * self.dy - self.ddy * self.dx
        return -cross / (self.metric * self.metric * self.metric)


def _band_truncate(mat: sparse.csr_matrix, n: int, width: int = STENCIL_WIDTH) -> sparse.csr_matrix:
    """Drop node-field entries coupling nodes more than ``width`` apart; the
    trailing length column is kept."""
    coo = mat.tocoo()
    node_col = coo.col % n
    gap = np.abs(coo.row - node_col)
    gap = np.minimum(gap, n - gap)
    keep = (gap <= width) | (coo.col == mat.shape[1] - 1)
    return sparse.csr_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=mat.shape)


def _twopoint_jet(
    x: Jet, y: Jet, metric: _Metric, kernel, mode: JacobianMode, nvar: int | None, method: str
) -> tuple[Jet, Jet, Jet]:
    """Force components and density as jets.

    Full mode carries the dense derivative blocks; frozen mode keeps only the
    couplings inside the stencil band, which holds the short-range part of the
    interaction while the Newton matrix stays banded.
    """
    pos = np.column_stack([x.val, y.val])
    w = metric.weight.val
    force, dens = twopoint_fields_weighted(pos, w, kernel, method)
    if nvar is None:
        return Jet(force[:, 0], None), Jet(force[:, 1], None), Jet(dens, None)
    n = pos.shape[0]
    d = pos[:, None, :] - pos[None, :, :]
    ell = np.einsum("ijk,ijk->ij", d, d)
    a, ap = kernel_eval(kernel, ell)
    wjac = metric.weight.matrix()
    # sensitivity to the quadrature weights
    gx = sparse.csr_matrix(4.0 * ap * d[..., 0]) @ wjac
    gy = sparse.csr_matrix(4.0 * ap * d[..., 1]) @ wjac
    gb = sparse.csr_matrix(2.0 * a) @ wjac
    dforce, ddens = twopoint_field_derivatives(pos, w, kernel)
    xm, ym = x.matrix(), y.matrix()
    dfx = sparse.csr_matrix(dforce[:, :, 0, 0]) @ xm + sparse.csr_matrix(dforce[:, :, 0, 1]) @ ym
    dfy = sparse.csr_matrix(dforce[:, :, 1, 0]) @ xm + sparse.csr_matrix(dforce[:, :, 1, 1]) @ ym
    dbb = sparse.csr_matrix(ddens[:, :, 0]) @ xm + sparse.csr_matrix(ddens[:, :, 1]) @ ym
    jx, jy, jb = (gx + dfx).tocsr(), (gy + dfy).tocsr(), (gb + dbb).tocsr()
    if mode == "frozen_twopoint":
        jx, jy, jb = (_band_truncate(m, n) for m in (jx, jy, jb))
    return Jet.with_matrix(force[:, 0], jx), Jet.with_matrix(force[:, 1], jy), Jet.with_matrix(dens, jb)


def _blocks(
    prev: DaeState,
    z: np.ndarray,
    k: float,
    model: FlowModel,
    with_jac: bool,
    mode: JacobianMode,
) -> list[Jet]:
    n = prev.n
    lay = Layout(n, uses_mu_fields(model))
    var = lambda name: Jet.variable(z, lay.start(name), n, with_jac)  # noqa: E731
    x, y, kappa, kss, v = var("x"), var("y"), var("kappa"), var("kappa_ss"), var("v")
    length = Jet.variable(z, lay.size - 1, 1, with_jac)
    m = _Metric(model.gauge, x, y, length, n)
    ddx, ddy = x - prev.x, y - prev.y

    blocks: list[Jet] = []
    if model.gauge == "comoving":
        blocks.append(ddx * m.dx + ddy * m.dy)
        blocks.append(ddx * m.dy - ddy * m.dx - k * (m.speed * v))
    else:
        blocks.append(ddx * m.dy - ddy * m.dx - k * (m.length_b * v))
        ex, ey = x.roll(-1) - x, y.roll(-1) - y
        blocks.append(ex * ex + ey * ey - m.chord * m.chord)
    blocks.append(kappa - m.curvature())
    blocks.append(kss - m.lap(kappa))

    if model.kind == "canham_helfrich":
        blocks.append(v - (kss + 0.5 * kappa**3 - model.beta * kappa))
    elif model.kind == "cha":
        p = model.cha
        nvar = z.size if with_jac else None
        fx, fy, dens = _twopoint_jet(x, y, m, p.kernel, mode, nvar, p.twopoint_method)
        tension = (length - p.target_length) * p.beta
        if model.velocity_form == "appendix":
            bending = p.epsilon * (kss - kappa**3)
        else:
            bending = p.epsilon * (kss + 0.5 * kappa**3)
        adhesion = fx * m.normal_x + fy * m.normal_y + kappa * dens
        blocks.append(v - (bending - kappa * tension.broadcast(n) - adhesion))
    else:
        mu, muss = var("mu"), var("mu_ss")
        pen = model.perimeter()
        tension = ((length - pen.target) * pen.beta).broadcast(n)
        if model.kind == "faceting":
            fp = model.faceting
            a2 = fp.alpha**2
            well = kappa.apply(
                lambda q: double_well(q, fp.kappa_star, fp.well_scale)[0],
                lambda q: double_well(q, fp.kappa_star, fp.well_scale)[1],
            )
            dwell = kappa.apply(
                lambda q: double_well(q, fp.kappa_star, fp.well_scale)[1],
                lambda q: double_well(q, fp.kappa_star, fp.well_scale)[2],
            )
            grad = m.grad(kappa)
            blocks.append(mu - (-a2 * kss + dwell))
            blocks.append(muss - m.lap(mu))
            blocks.append(v - (muss + kappa * kappa * mu - kappa * (-0.5 * a2 * grad * grad + well + tension)))
        else:
            dens = model.generic.density
            slope = m.half_slope(kappa)
            kmid = 0.5 * (kappa + kappa.roll(-1))
            flux = apply2(dens.f1, dens.f11, dens.f10, slope, kmid)
            grad = m.grad(kappa)
            f0 = apply2(dens.f0, dens.f10, dens.f00, grad, kappa)
            f1 = apply2(dens.f1, dens.f11, dens.f10, grad, kappa)
            ff = apply2(dens.f, dens.f1, dens.f0, grad, kappa)
            blocks.append(mu - (f0 - m.divergence(flux)))
            blocks.append(muss - m.lap(mu))
            blocks.append(v - (muss + kappa * kappa * mu - kappa * (ff - f1 * grad + tension)))

    if model.gauge == "comoving":
        blocks.append(length - m.chord.sum())
    else:
        blocks.append((ddx * m.dx + ddy * m.dy).sum() * (1.0 / n))
    return blocks


def assemble_residual(prev: DaeState, trial: DaeState, k: float, model: FlowModel) -> np.ndarray:
    """Residual blocks: two motion/parameterization groups, curvature, Laplacian,
    the model fields, and the gauge row (or the length definition when comoving).

    The gauge row is scaled by ``1/N`` so it reads as a parameter-space integral.
    """
    return stack(_blocks(prev, trial.pack(), k, model, False, "full"))[0]


def assemble_jacobian(
    prev: DaeState, trial: DaeState, k: float, model: FlowModel, settings: NewtonSettings | None = None
) -> sparse.csc_matrix:
    mode = (settings or NewtonSettings()).jacobian_mode
    _, jac = stack(_blocks(prev, trial.pack(), k, model, True, mode))
    return jac.tocsc()


def _residual_and_jacobian(
    prev: DaeState, z: np.ndarray, k: float, model: FlowModel, mode: JacobianMode, with_jac: bool
) -> tuple[np.ndarray, sparse.csr_matrix | None]:
    return stack(_blocks(prev, z, k, model, with_jac, mode))


def outside_band(jac: sparse.spmatrix, layout: Layout, width: int = STENCIL_WIDTH) -> int:
    """Count nonzeros coupling grid nodes more than ``width`` apart (periodically),
    ignoring the border row and column."""
    coo = jac.tocoo()
    nr = layout.node_of(coo.row)
    nc = layout.node_of(coo.col)
    border = (nr < 0) | (nc < 0) | (coo.row == layout.size - 1)
    gap = np.abs(nr - nc)
    gap = np.minimum(gap, layout.n - gap)
    return int(np.sum((~border) & (gap > width) & (coo.data != 0)))


# ---------------------------------------------------------------------------
# Newton


def _row_scales(state: DaeState, model: FlowModel) -> np.ndarray:
    """Per-row normalisation so the convergence test is dimensionless."""
    n = state.n
    ell = state.length
    size = max(1.0, float(np.max(np.abs(state.positions))))
    scal = lambda a: max(1.0, float(np.max(np.abs(a))))  # noqa: E731
    parts = []
    if model.gauge == "comoving":
        parts += [np.full(n, ell * size), np.full(n, ell * size)]
    else:
        parts += [np.full(n, ell * size), np.full(n, 2.0 * ell * size / n)]
    parts += [np.full(n, scal(state.kappa)), np.full(n, scal(state.kappa_ss))]
    if state.mu is not None:
        parts += [np.full(n, scal(state.mu)), np.full(n, scal(state.mu_ss))]
    parts += [np.full(n, scal(state.v)), np.array([ell * size])]
    return np.concatenate(parts)


def _newton_direction(
    prev: DaeState,
    z: np.ndarray,
    k: float,
    model: FlowModel,
    settings: NewtonSettings,
    jac: sparse.csr_matrix,
    res: np.ndarray,
    norm: float,
) -> np.ndarray:
    try:
        lu = splu(jac.tocsc())
    except RuntimeError as exc:
        raise StepFailure(f"singular Newton matrix: {exc}", "singular", norm) from None
    krylov = (
        model.kind == "cha" and settings.jacobian_mode == "frozen_twopoint" and settings.linear_solver == "krylov"
    )
    if not krylov:
        return lu.solve(-res)
    # exact Newton direction; the dense two-point block only enters through products
    _, full = _residual_and_jacobian(prev, z, k, model, "full", True)
    start = lu.solve(-res)
    scale = float(np.linalg.norm(res))

    def true_residual(step: np.ndarray) -> float:
        return float(np.linalg.norm(full @ step + res)) / scale

    # when every coupling sits inside the band the banded solve is already exact
    if true_residual(start) <= settings.krylov_rtol:
        return start
    op = LinearOperator(full.shape, matvec=full.dot, dtype=float)
    pre = LinearOperator(full.shape, matvec=lu.solve, dtype=float)
    step, info = gmres(op, -res, x0=start, M=pre, rtol=settings.krylov_rtol, atol=0.0, restart=60, maxiter=20)
    if info != 0:
        # a stalled solve near round-off still gives an inexact Newton direction
        achieved = true_residual(step)
        if achieved > KRYLOV_ACCEPT:
            raise StepFailure(f"GMRES did not converge (info={info}, residual {achieved:.1e})", "krylov", norm)
    return step


def newton_step_solve(
    prev: DaeState, k: float, model: FlowModel, settings: NewtonSettings, guess: DaeState | None = None
) -> tuple[DaeState, int, float]:
    """One implicit Euler step of size ``k`` from ``prev``.

    Damped Newton: the full update is halved (at most ``max_halvings`` times)
    until the scaled residual max-norm decreases.
    """
    lay = Layout(prev.n, uses_mu_fields(model))
    z = (guess or prev).pack()
    scales = _row_scales(prev, model)
    res, jac = _residual_and_jacobian(prev, z, k, model, settings.jacobian_mode, True)
    norm = float(np.max(np.abs(res) / scales))
    for it in range(settings.max_iter + 1):
        if not math.isfinite(norm):
            raise StepFailure("non-finite residual", "nonfinite", norm)
        if norm < settings.tol:
            return DaeState.unpack(z, prev.n, lay.with_mu), it, norm
        if it == settings.max_iter:
            break
        step = _newton_direction(prev, z, k, model, settings, jac, res, norm)
        if not np.all(np.isfinite(step)):
            raise StepFailure("non-finite Newton update", "singular", norm)
        lam = 1.0
        for _ in range(settings.max_halvings + 1):
            z_new = z + lam * step
            try:
                res_new, _ = _residual_and_jacobian(prev, z_new, k, model, settings.jacobian_mode, False)
                norm_new = float(np.max(np.abs(res_new) / scales))
            except (FloatingPointError, ValueError):
                norm_new = math.inf
            if math.isfinite(norm_new) and norm_new < norm:
                break
            lam *= 0.5
        else:
            raise StepFailure("line search failed to reduce the residual", "linesearch", norm)
        z = z_new
        res, jac = _residual_and_jacobian(prev, z, k, model, settings.jacobian_mode, True)
        norm = float(np.max(np.abs(res) / scales))
    raise StepFailure(f"Newton did not converge in {settings.max_iter} iterations", "max_iter", norm)


# ---------------------------------------------------------------------------
# initial state


def init_state(
    curve: ClosedCurve, model: FlowModel, *, resample: bool = True, settings: NewtonSettings | None = None
) -> DaeState:
    """Resample to scaled arc length and fill the algebraic fields consistently.

    The fields are first computed with the geometry and flow modules and then
    polished by a zero-length Newton step so they satisfy the discrete
    relations exactly.
    """
    if resample:
        curve = resample_scaled_arclength(curve)
    frame = compute_frame(curve)
    length = curve.length
    kappa = frame.kappa
    kss = d2(kappa) / length**2
    v = normal_velocity(frame, length, model, curve)
    mu = mu_ss = None
    if uses_mu_fields(model):
        from .flow import local_gradient

        mu = local_gradient(frame, length, model).dkappa
        mu_ss = d2(mu) / length**2
    x, y = curve.positions[:, 0], curve.positions[:, 1]
    state = DaeState(x.copy(), y.copy(), kappa, kss, v, length, mu, mu_ss)
    polished, _, _ = newton_step_solve(state, 0.0, model, settings or NewtonSettings())
    return polished


# ---------------------------------------------------------------------------
# diagnostics and adaptive stepping


def state_energy(state: DaeState, model: FlowModel) -> float:
    """Energy of the state's curve; the comoving gauge uses the nonuniform-metric quadrature."""
    curve = state.curve()
    if model.gauge != "comoving":
        return model_energy(curve, compute_frame(curve), curve.length, model)
    from .energy import general_metric

    gm = general_metric(state.positions)
    if model.kind == "cha":
        p = model.cha
        bend = first_order_energy_general(gm.kappa, gm.g, canham_helfrich_density(0.0, p.epsilon))
        return energy_twopoint_weighted(state.positions, gm.weights, p.kernel) + p.perimeter().energy(gm.length) + bend
    return first_order_energy_general(gm.kappa, gm.g, model.local_density()) + model.perimeter().energy(gm.length)


def state_diagnostics(
    state: DaeState,
    model: FlowModel,
    prev_energy: float | None = None,
    dt: float | None = None,
    pair_exclusion: float | None = None,
) -> FlowDiagnostics:
    curve = state.curve()
    frame = compute_frame(curve)
    length = curve.length
    energy = state_energy(state, model)
    if model.gauge == "comoving":
        chords = curve.chords
        weights = 0.5 * (chords + np.roll(chords, 1))
        pred = -float(np.sum(state.v**2 * weights))
    else:
        pred = -float(np.sum(state.v**2) * length / state.n)
    obs = (energy - prev_energy) / dt if prev_energy is not None and dt else math.nan
    rk, rg = residual_norms(frame, length, model)
    tau_int, kappa_int = closure_residual(frame, length)
    return FlowDiagnostics(
        energy=energy,
        dissipation_pred=pred,
        dissipation_obs=obs,
        r_kappa_norm=rk,
        r_g_norm=rg,
        closure=((float(tau_int[0]), float(tau_int[1])), float(kappa_int)),
        min_pair_distance=min_pair_distance(curve, pair_exclusion),
        vn_max=float(np.max(np.abs(state.v))),
    )


@dataclass
class TrajectoryPoint:
    t: float
    dt: float
    state: DaeState
    diagnostics: FlowDiagnostics


@dataclass
class Trajectory:
    points: list[TrajectoryPoint] = field(default_factory=list)
    accepted: int = 0
    rejected: int = 0
    newton_failures: int = 0
    status: str = "running"
    reason: str = ""
    equilibrium_time: float | None = None

    @property
    def final(self) -> TrajectoryPoint:
        return self.points[-1]

    @property
    def time_steps(self) -> int:
        """Implicit Euler steps of size ``k`` kept in the solution (two per accepted attempt)."""
        return 2 * self.accepted


def _extrapolate(state: DaeState, slope: np.ndarray | None, k: float) -> DaeState | None:
    if slope is None:
        return None
    return DaeState.unpack(state.pack() + k * slope, state.n, state.mu is not None)


def _predicted_solve(
    state: DaeState, k: float, model: FlowModel, settings: NewtonSettings, guess: DaeState | None
) -> DaeState:
    """Newton from a linear predictor, falling back to the current state."""
    if guess is not None:
        try:
            return newton_step_solve(state, k, model, settings, guess=guess)[0]
        except StepFailure:
            pass
    return newton_step_solve(state, k, model, settings)[0]


def adaptive_advance(
    state0: DaeState,
    t_end: float,
    ctrl: StepController,
    model: FlowModel,
    settings: NewtonSettings,
    *,
    callback: Callable[[TrajectoryPoint], None] | None = None,
    stop_at_equilibrium: bool = False,
    equilibrium_speed: float = EQUILIBRIUM_SPEED,
    equilibrium_window: int = EQUILIBRIUM_WINDOW,
    max_attempts: int = 1_000_000,
    diagnostics: bool = True,
    pair_exclusion: float | None = None,
) -> Trajectory:
    """Step-doubling integration to ``t_end``.

    Every attempt takes two steps of size ``k`` and one of size ``2k`` from
    the same state; the max-norm of the position difference is the local
    error estimate.  Accepted attempts advance time by ``2k``.
    """
    traj = Trajectory()
    t = 0.0
    state = state0
    diag0 = state_diagnostics(state, model, pair_exclusion=pair_exclusion) if diagnostics else None
    first = TrajectoryPoint(0.0, 0.0, state, diag0)
    traj.points.append(first)
    if callback:
        callback(first)
    energy = diag0.energy if diag0 else None
    quiet = 0
    attempts = 0
    slope: np.ndarray | None = None
    while t < t_end * (1.0 - 1e-12):
        attempts += 1
        if attempts > max_attempts:
            traj.status, traj.reason = "aborted", "attempt limit reached"
            return traj
        k = min(ctrl.k, 0.5 * (t_end - t))
        try:
            half = _predicted_solve(state, k, model, settings, _extrapolate(state, slope, k))
            fine = _predicted_solve(half, k, model, settings, _extrapolate(half, (half.pack() - state.pack()) / k, k))
            coarse, _, _ = newton_step_solve(state, 2.0 * k, model, settings, guess=fine)
        except StepFailure as exc:
            traj.newton_failures += 1
            ctrl.k = k * ctrl.shrink_floor
            logger.debug("t=%.6g k=%.3g Newton failure (%s)", t, k, exc.cause)
            if ctrl.k < ctrl.k_min:
                traj.status, traj.reason = "failed", f"step size below k_min after Newton failure ({exc.cause})"
                return traj
            continue
        err = float(np.max(np.abs(fine.positions - coarse.positions)))
        factor = ctrl.factor(err)
        if err > ctrl.sigma:
            traj.rejected += 1
            ctrl.k = k * factor
            if ctrl.k < ctrl.k_min:
                traj.status, traj.reason = "failed", "step size below k_min"
                return traj
            continue
        traj.accepted += 1
        t += 2.0 * k
        slope = (fine.pack() - half.pack()) / k
        state = fine
        diag = state_diagnostics(state, model, energy, 2.0 * k, pair_exclusion) if diagnostics else None
        if diag:
            energy = diag.energy
        point = TrajectoryPoint(t, 2.0 * k, state, diag)
        traj.points.append(point)
        if callback:
            callback(point)
        # keep the untruncated proposal when the last step was clipped to t_end
        ctrl.k = min(ctrl.k_max, max(ctrl.k_min, k * factor))
        speed = float(np.max(np.abs(state.v)))
        quiet = quiet + 1 if speed < equilibrium_speed else 0
        if quiet >= equilibrium_window and traj.equilibrium_time is None:
            traj.equilibrium_time = t
            if stop_at_equilibrium:
                traj.status, traj.reason = "equilibrium", f"|V| < {equilibrium_speed:g} for {equilibrium_window} steps"
                return traj
    traj.status = "completed"
    return traj


def with_length(state: DaeState, length: float) -> DaeState:
    return replace(state, length=length)
