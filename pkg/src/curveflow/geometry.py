"""Closed planar curves on a uniform periodic grid.

Curves are stored as ``(N, 2)`` position arrays sampled at ``s_j = j / N`` on a
parameter circle of unit length.  Most of the package assumes the *scaled
arc-length* parameterization, where every chord has length ``L / N`` and the
metric ``|d gamma / ds|`` equals the total length ``L``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import spsolve

logger = logging.getLogger(__name__)

MIN_POINTS = 8


class CurveError(ValueError):
    """Invalid curve data or shape description."""


class ResampleError(RuntimeError):
    """Scaled arc-length resampling did not converge."""

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class ClosedCurve:
    """Ordered periodic samples of a closed planar curve."""

    positions: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.positions, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise CurveError(f"positions must have shape (N, 2), got {pts.shape}")
        if pts.shape[0] < MIN_POINTS:
            raise CurveError(f"need at least {MIN_POINTS} points, got {pts.shape[0]}")
        if not np.all(np.isfinite(pts)):
            raise CurveError("positions contain non-finite values")
        object.__setattr__(self, "positions", pts)

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    @property
    def chords(self) -> np.ndarray:
        return np.linalg.norm(np.roll(self.positions, -1, axis=0) - self.positions, axis=1)

    @property
    def length(self) -> float:
        return float(np.sum(self.chords))

    @property
    def s(self) -> np.ndarray:
        return np.arange(self.n_points) / self.n_points


@dataclass(frozen=True)
class CurveFrame:
    """Unit tangent and outward normal, tangent angle and curvature per node."""

    tangent: np.ndarray
    normal: np.ndarray
    theta: np.ndarray
    kappa: np.ndarray
    length: float


# ---------------------------------------------------------------------------
# periodic finite differences on the unit parameter circle


def d1(f: np.ndarray) -> np.ndarray:
    """Centered first difference ``(f[j+1] - f[j-1]) / 2h`` with ``h = 1/N``."""
    n = f.shape[0]
    return (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) * (0.5 * n)


def d2(f: np.ndarray) -> np.ndarray:
    """Centered second difference ``(f[j+1] - 2 f[j] + f[j-1]) / h^2``."""
    n = f.shape[0]
    return (np.roll(f, -1, axis=0) - 2.0 * f + np.roll(f, 1, axis=0)) * float(n * n)


def perp(v: np.ndarray, sign: int = 1) -> np.ndarray:
    """Rotate vectors by -pi/2, ``(x, y) -> (y, -x)``.

    With this orientation the perpendicular of the unit tangent of a
    counterclockwise curve is its outward normal.  ``sign=-1`` flips the
    rotation and exists only as a negative control for the audit.
    """
    out = np.empty_like(v)
    out[..., 0] = sign * v[..., 1]
    out[..., 1] = -sign * v[..., 0]
    return out


def surface_gradient(field: np.ndarray, length: float) -> np.ndarray:
    return d1(field) / length


def laplace_beltrami(field: np.ndarray, length: float) -> np.ndarray:
    return d2(field) / (length * length)


def integrate_surface(field: np.ndarray, length: float) -> float:
    """Periodic trapezoid rule with ``d sigma = L / N``."""
    field = np.asarray(field)
    return float(np.sum(field, axis=0) * (length / field.shape[0]))


def integrate_surface_vec(field: np.ndarray, length: float) -> np.ndarray:
    field = np.asarray(field)
    return np.sum(field, axis=0) * (length / field.shape[0])


# ---------------------------------------------------------------------------
# frame and closure


def compute_frame(curve: ClosedCurve, *, perp_sign: int = 1) -> CurveFrame:
    """Tangent, normal, unwrapped tangent angle and curvature.

    Curvature uses ``kappa = -(D2 X . (D1 X)^perp) / L^3`` which is positive on
    a counterclockwise circle.
    """
    x = curve.positions
    length = curve.length
    dx = d1(x)
    ddx = d2(x)
    speed = np.linalg.norm(dx, axis=1)
    tangent = dx / speed[:, None]
    normal = perp(tangent, perp_sign)
    kappa = -np.einsum("ij,ij->i", ddx, perp(dx, perp_sign)) / length**3
    theta = np.unwrap(np.arctan2(tangent[:, 1], tangent[:, 0]))
    return CurveFrame(tangent=tangent, normal=normal, theta=theta, kappa=kappa, length=length)


def closure_residual(frame: CurveFrame, length: float) -> tuple[np.ndarray, float]:
    """Return ``(integral of tau, integral of kappa - 2 pi)``."""
    tau_int = integrate_surface_vec(frame.tangent, length)
    kappa_int = integrate_surface(frame.kappa, length) - 2.0 * math.pi
    return tau_int, kappa_int


def cumulative_integral(field: np.ndarray, length: float) -> np.ndarray:
    """Cumulative trapezoid integral from node 0, zero at node 0."""
    field = np.asarray(field, dtype=float)
    n = field.shape[0]
    ds = length / n
    incr = 0.5 * (field[:-1] + field[1:]) * ds
    out = np.zeros_like(field)
    out[1:] = np.cumsum(incr, axis=0)
    return out


def curve_from_intrinsic(
    kappa: np.ndarray,
    length: float,
    theta0: float = 0.0,
    origin: Sequence[float] = (0.0, 0.0),
) -> ClosedCurve:
    """Rebuild positions from a curvature field on a scaled arc-length grid.

    The tangent angle is the cumulative trapezoid of ``kappa``; positions are
    the cumulative trapezoid of the tangent.  The result closes only as well
    as the curvature field satisfies the closure conditions.
    """
    theta = theta0 + cumulative_integral(kappa, length)
    tau = np.column_stack([np.cos(theta), np.sin(theta)])
    pos = np.asarray(origin, dtype=float) + cumulative_integral(tau, length)
    return ClosedCurve(pos)


# ---------------------------------------------------------------------------
# shape catalog


def circle(radius: float, n: int, center: Sequence[float] = (0.0, 0.0)) -> ClosedCurve:
    _check_n(n)
    t = 2.0 * np.pi * np.arange(n) / n
    pts = np.column_stack([radius * np.cos(t), radius * np.sin(t)]) + np.asarray(center, float)
    return ClosedCurve(pts)


def polar(radius: Callable[[np.ndarray], np.ndarray] | np.ndarray, n: int) -> ClosedCurve:
    """Sample ``r(theta) (cos theta, sin theta)`` at ``theta_j = 2 pi j / n``.

    ``radius`` is either a callable or a table of ``n`` radii.
    """
    _check_n(n)
    t = 2.0 * np.pi * np.arange(n) / n
    r = radius(t) if callable(radius) else np.asarray(radius, dtype=float)
    if r.shape != (n,):
        raise CurveError(f"radius table has shape {r.shape}, expected ({n},)")
    if np.any(r <= 0):
        raise CurveError("polar radius must be positive")
    return ClosedCurve(np.column_stack([r * np.cos(t), r * np.sin(t)]))


def cosine_series(r0: float, modes: Sequence[Sequence[float]]) -> Callable[[np.ndarray], np.ndarray]:
    """``r(theta) = r0 + sum a_m cos(m theta + phase_m)`` for ``(m, a_m[, phase_m])`` rows."""

    def radius(t: np.ndarray) -> np.ndarray:
        r = np.full_like(t, r0, dtype=float)
        for mode in modes:
            m, amp = mode[0], mode[1]
            phase = mode[2] if len(mode) > 2 else 0.0
            r = r + amp * np.cos(m * t + phase)
        return r

    return radius


def smoothed_square_wave(t: np.ndarray, sharpness: float = 4.0) -> np.ndarray:
    """Square wave in ``[-1, 1]`` with tanh-rounded edges; ``cos`` when sharpness -> 0."""
    if sharpness <= 0:
        return np.cos(t)
    return np.tanh(sharpness * np.cos(t)) / np.tanh(sharpness)


def crenelated(
    lobes: int = 13,
    amplitude: float = 0.05,
    n: int = 300,
    radius: float = 1.0,
    sharpness: float = 4.0,
) -> ClosedCurve:
    """Polar ``r = radius (1 + amplitude * square_wave(lobes * theta))``."""
    return polar(lambda t: radius * (1.0 + amplitude * smoothed_square_wave(lobes * t, sharpness)), n)


def build_curve(shape: Mapping) -> ClosedCurve:
    """Build a curve from a shape description (not yet in scaled arc length).

    Recognised ``kind`` values: ``circle``, ``polar``, ``crenelated``, ``file``.
    """
    kind = shape.get("kind")
    try:
        if kind == "circle":
            return circle(float(shape.get("radius", 1.0)), int(shape["n"]), shape.get("center", (0.0, 0.0)))
        if kind == "polar":
            n = int(shape["n"])
            if "table" in shape:
                return polar(np.asarray(shape["table"], dtype=float), n)
            return polar(cosine_series(float(shape.get("r0", 1.0)), shape.get("modes", [])), n)
        if kind == "crenelated":
            return crenelated(
                lobes=int(shape.get("lobes", 13)),
                amplitude=float(shape.get("amplitude", 0.05)),
                n=int(shape["n"]),
                radius=float(shape.get("radius", 1.0)),
                sharpness=float(shape.get("sharpness", 4.0)),
            )
        if kind == "file":
            return read_curve_csv(shape["path"])
    except KeyError as exc:
        raise CurveError(f"shape '{kind}' is missing field {exc}") from None
    raise CurveError(f"unknown shape kind {kind!r}")


def jittered_circle(radius: float, n: int, jitter: float, seed: int = 0) -> ClosedCurve:
    rng = np.random.default_rng(seed)
    base = circle(radius, n).positions
    return ClosedCurve(base + jitter * rng.standard_normal(base.shape))


def _check_n(n: int) -> None:
    if n < MIN_POINTS:
        raise CurveError(f"need at least {MIN_POINTS} points, got {n}")


# ---------------------------------------------------------------------------
# resampling to scaled arc length


def resample_scaled_arclength(
    curve: ClosedCurve,
    tol: float = 1e-12,
    max_iter: int = 50,
    max_smoothing: int = 5,
    n_out: int | None = None,
) -> ClosedCurve:
    """Redistribute nodes along a periodic cubic spline so all chords are equal.

    Node 0 stays fixed.  The unknowns are the spline parameters of nodes
    ``1..N-1`` and the common chord length, found by Newton iteration.  When
    Newton stalls, the input points get one pass of 3-point smoothing and the
    solve is retried, at most ``max_smoothing`` times.
    """
    pts = curve.positions
    n = n_out or curve.n_points
    last = math.inf
    for attempt in range(max_smoothing + 1):
        try:
            out, iters = _resample_once(pts, n, tol, max_iter)
            logger.debug("resampled N=%d in %d Newton iterations (smoothing passes %d)", n, iters, attempt)
            return out
        except ResampleError as exc:
            last = exc.residual
            logger.info("resampling stalled (residual %.2e); smoothing input, pass %d", last, attempt + 1)
            pts = 0.25 * (np.roll(pts, 1, axis=0) + 2.0 * pts + np.roll(pts, -1, axis=0))
    raise ResampleError("scaled arc-length resampling failed after smoothing retries", last)


def resample_iterations(curve: ClosedCurve, tol: float = 1e-12, max_iter: int = 50) -> int:
    """Newton iteration count of a single resampling attempt (diagnostic)."""
    return _resample_once(curve.positions, curve.n_points, tol, max_iter)[1]


def _resample_once(pts: np.ndarray, n: int, tol: float, max_iter: int) -> tuple[ClosedCurve, int]:
    m = pts.shape[0]
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    if np.any(seg <= 0):
        raise CurveError("consecutive duplicate points")
    knots = np.concatenate([[0.0], np.cumsum(seg)])
    period = knots[-1]
    spline = CubicSpline(knots, np.vstack([pts, pts[:1]]), bc_type="periodic")
    dspline = spline.derivative()

    # unknowns: u_1..u_{n-1}, chord c
    u = period * np.arange(n) / n
    chord = period / n
    rows = np.arange(n)
    for it in range(max_iter + 1):
        u_next = np.append(u[1:], u[0] + period)
        p = spline(np.mod(u, period))
        q = spline(np.mod(u_next, period))
        delta = q - p
        dist = np.linalg.norm(delta, axis=1)
        res = dist - chord
        err = float(np.max(np.abs(res)))
        if err <= tol:
            out = spline(np.mod(u, period))
            return ClosedCurve(out), it
        if it == max_iter or not np.all(np.isfinite(res)) or np.any(dist == 0):
            break
        unit = delta / dist[:, None]
        dq = np.einsum("ij,ij->i", unit, dspline(np.mod(u_next, period)))
        dp = -np.einsum("ij,ij->i", unit, dspline(np.mod(u, period)))
        # residual j depends on u_j (column j-1 for j>=1), u_{j+1} (column j), chord (column n-1)
        r_idx, c_idx, vals = [], [], []
        for rr, cc, vv in (
            (rows[1:], rows[1:] - 1, dp[1:]),
            (rows[:-1], rows[:-1], dq[:-1]),
            (rows, np.full(n, n - 1), -np.ones(n)),
        ):
            r_idx.append(rr)
            c_idx.append(cc)
            vals.append(vv)
        jac = sparse.csc_matrix(
            (np.concatenate(vals), (np.concatenate(r_idx), np.concatenate(c_idx))), shape=(n, n)
        )
        step = spsolve(jac, -res)
        if not np.all(np.isfinite(step)):
            break
        u[1:] += step[:-1]
        chord += step[-1]
        if np.any(np.diff(u) <= 0) or u[-1] >= period or chord <= 0:
            break
    raise ResampleError("Newton iteration for equal chords did not converge", err)


# ---------------------------------------------------------------------------
# diagnostics


def self_intersections(curve: ClosedCurve) -> int:
    """Count crossing pairs of non-adjacent polygon edges (brute force)."""
    p = curve.positions
    q = np.roll(p, -1, axis=0)
    n = p.shape[0]
    count = 0
    for i in range(n):
        j = np.arange(i + 2, n)
        if i == 0:
            j = j[j != n - 1]
        if j.size == 0:
            continue
        a, b = p[i], q[i]
        c, d = p[j], q[j]
        o1 = _orient(a, b, c)
        o2 = _orient(a, b, d)
        o3 = _orient_many(c, d, a)
        o4 = _orient_many(c, d, b)
        count += int(np.sum((o1 * o2 < 0) & (o3 * o4 < 0)))
    return count


def _orient(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return (b[0] - a[0]) * (c[:, 1] - a[1]) - (b[1] - a[1]) * (c[:, 0] - a[0])


def _orient_many(c: np.ndarray, d: np.ndarray, a: np.ndarray) -> np.ndarray:
    return (d[:, 0] - c[:, 0]) * (a[1] - c[:, 1]) - (d[:, 1] - c[:, 1]) * (a[0] - c[:, 0])


def nonlocal_distances(curve: ClosedCurve, exclusion: float) -> np.ndarray:
    """Per node, the distance to the nearest polygon edge farther than ``exclusion`` along the curve.

    Returns ``inf`` for nodes with no such edge.
    """
    p = curve.positions
    n = p.shape[0]
    q = np.roll(p, -1, axis=0)
    ds = curve.length / n
    idx = np.arange(n)
    out = np.full(n, np.inf)
    e = q - p
    ee = np.maximum(np.einsum("ij,ij->i", e, e), 1e-300)
    for i in range(n):
        gap = np.abs(idx - i)
        gap = np.minimum(gap, n - gap)
        # an edge j spans nodes j and j+1; require both ends outside the window
        gap_next = np.abs(idx + 1 - i) % n
        gap_next = np.minimum(gap_next, n - gap_next)
        mask = (np.minimum(gap, gap_next) * ds) > exclusion
        if not np.any(mask):
            continue
        w = p[i] - p[mask]
        t = np.clip(np.einsum("ij,ij->i", w, e[mask]) / ee[mask], 0.0, 1.0)
        dvec = w - t[:, None] * e[mask]
        out[i] = float(np.min(np.linalg.norm(dvec, axis=1)))
    return out


def min_pair_distance(curve: ClosedCurve, exclusion: float | None = None) -> float:
    """Smallest node-to-edge distance between parts of the curve that are far apart along it.

    ``exclusion`` defaults to a tenth of the curve length.
    """
    if exclusion is None:
        exclusion = 0.1 * curve.length
    d = nonlocal_distances(curve, exclusion)
    return float(np.min(d)) if np.any(np.isfinite(d)) else math.inf


# ---------------------------------------------------------------------------
# CSV curve files


def write_curve_csv(path: str | Path, curve: ClosedCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "x", "y"])
        for s, (x, y) in zip(curve.s, curve.positions):
            w.writerow([repr(float(s)), repr(float(x)), repr(float(y))])


def read_curve_csv(path: str | Path) -> ClosedCurve:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"s", "x", "y"} <= set(reader.fieldnames):
            raise CurveError(f"{path}: expected header with columns s,x,y")
        rows = [(float(r["s"]), float(r["x"]), float(r["y"])) for r in reader]
    if len(rows) < MIN_POINTS:
        raise CurveError(f"{path}: need at least {MIN_POINTS} rows, got {len(rows)}")
    arr = np.asarray(rows)
    n = arr.shape[0]
    if np.any(np.diff(arr[:, 0]) <= 0):
        raise CurveError(f"{path}: column s must be strictly increasing")
    if not np.allclose(arr[:, 0], np.arange(n) / n, atol=1e-9):
        raise CurveError(f"{path}: s column does not match s_j = j/N for N={n}")
    return ClosedCurve(arr[:, 1:])
