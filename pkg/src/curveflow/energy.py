"""Curve energies with their intrinsic gradients and Hessians.

Three families are covered:

* first-order densities ``E = int F(p, kappa) dsigma`` with ``p = d kappa / dsigma``,
  including the faceting (Allen-Cahn in curvature) and Canham-Helfrich cases;
* global perimeter penalties ``beta/2 (|Gamma| - L_target)^2``;
* the two-point self-interaction ``E_A = int int A(|x(s) - x(t)|^2) dsigma dsigma``.

Intrinsic gradients are pairs ``(dE/dkappa, dE/dg)`` with respect to the
dsigma-weighted inner product.  On the scaled arc-length grid ``g = L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import ClosedCurve, CurveFrame, d1, d2, integrate_surface, perp
from .variation import ExtrinsicVelocity, IntrinsicField

Density2 = Callable[[np.ndarray, np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# first-order densities


@dataclass(frozen=True)
class FirstOrderDensity:
    """``F(p, kappa)`` and its partial derivatives.

    ``f0 = dF/dkappa``, ``f1 = dF/dp``, ``f00``, ``f10 = d2F/dp dkappa``,
    ``f11 = d2F/dp2``.  All callables take ``(p, kappa)`` arrays.
    """

    f: Density2
    f0: Density2
    f1: Density2
    f00: Density2
    f10: Density2
    f11: Density2
    name: str = "density"


def _const(c: float) -> Density2:
    return lambda p, k: np.full(np.broadcast(p, k).shape, c, dtype=float)


def canham_helfrich_density(beta: float = 0.0, epsilon: float = 1.0) -> FirstOrderDensity:
    """``F = epsilon kappa^2 / 2 + beta``."""
    return FirstOrderDensity(
        f=lambda p, k: 0.5 * epsilon * k * k + beta,
        f0=lambda p, k: epsilon * k,
        f1=_const(0.0),
        f00=_const(epsilon),
        f10=_const(0.0),
        f11=_const(0.0),
        name="canham_helfrich",
    )


def double_well(kappa: np.ndarray, kappa_star: float, w0: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``W = w0 k^2 (k - k*)^2`` with its first and second derivatives."""
    k = np.asarray(kappa, dtype=float)
    km = k - kappa_star
    w = w0 * k * k * km * km
    wp = 2.0 * w0 * k * km * (2.0 * k - kappa_star)
    wpp = 2.0 * w0 * (6.0 * k * k - 6.0 * kappa_star * k + kappa_star * kappa_star)
    return w, wp, wpp


def faceting_density(alpha: float, kappa_star: float, w0: float = 1.0) -> FirstOrderDensity:
    """``F = alpha^2 p^2 / 2 + W(kappa)``."""
    a2 = alpha * alpha
    return FirstOrderDensity(
        f=lambda p, k: 0.5 * a2 * p * p + double_well(k, kappa_star, w0)[0],
        f0=lambda p, k: double_well(k, kappa_star, w0)[1] + 0.0 * p,
        f1=lambda p, k: a2 * p + 0.0 * k,
        f00=lambda p, k: double_well(k, kappa_star, w0)[2] + 0.0 * p,
        f10=_const(0.0),
        f11=_const(a2),
        name="faceting",
    )


@dataclass(frozen=True)
class PolynomialDensity:
    """``F = sum_{a,b} c[a, b] p^a kappa^b``, mainly for randomized tests."""

    coeffs: np.ndarray

    def _eval(self, p: np.ndarray, k: np.ndarray, dp: int, dk: int) -> np.ndarray:
        c = np.asarray(self.coeffs, dtype=float)
        out = np.zeros(np.broadcast(p, k).shape)
        for a in range(dp, c.shape[0]):
            fa = math.perm(a, dp)
            for b in range(dk, c.shape[1]):
                if c[a, b] == 0.0:
                    continue
                out = out + c[a, b] * fa * math.perm(b, dk) * p ** (a - dp) * k ** (b - dk)
        return out

    def density(self) -> FirstOrderDensity:
        return FirstOrderDensity(
            f=lambda p, k: self._eval(p, k, 0, 0),
            f0=lambda p, k: self._eval(p, k, 0, 1),
            f1=lambda p, k: self._eval(p, k, 1, 0),
            f00=lambda p, k: self._eval(p, k, 0, 2),
            f10=lambda p, k: self._eval(p, k, 1, 1),
            f11=lambda p, k: self._eval(p, k, 2, 0),
            name="polynomial",
        )


def random_polynomial_density(seed: int = 0, scale: float = 0.3) -> FirstOrderDensity:
    """A smooth random density with every partial derivative nonzero."""
    rng = np.random.default_rng(seed)
    c = scale * rng.standard_normal((3, 4))
    c[2, 0] = abs(c[2, 0]) + 0.5
    c[0, 2] = abs(c[0, 2]) + 0.5
    return PolynomialDensity(c).density()


@dataclass(frozen=True)
class PerimeterPenalty:
    """``beta/2 (|Gamma| - target)^2``."""

    beta: float = 0.0
    target: float = 0.0

    def energy(self, length: float) -> float:
        return 0.5 * self.beta * (length - self.target) ** 2

    def tension(self, length: float) -> float:
        return self.beta * (length - self.target)


def first_order_energy_general(kappa: np.ndarray, g: np.ndarray, density: FirstOrderDensity) -> float:
    """``sum F(p_j, kappa_j) g_j h`` for a node-wise metric ``g`` (not necessarily constant)."""
    n = kappa.shape[0]
    p = d1(kappa) / g
    return float(np.sum(density.f(p, kappa) * g) / n)


def energy_first_order(frame: CurveFrame, length: float, density: FirstOrderDensity) -> float:
    kappa = frame.kappa
    p = d1(kappa) / length
    return integrate_surface(density.f(p, kappa), length)


def _half_node_flux(kappa: np.ndarray, length: float, fn: Density2) -> np.ndarray:
    """``fn`` evaluated midway between nodes ``j`` and ``j+1`` with the compact slope."""
    n = kappa.shape[0]
    kp = np.roll(kappa, -1)
    p_half = (kp - kappa) * n / length
    return fn(p_half, 0.5 * (kp + kappa))


def divergence_of_flux(kappa: np.ndarray, length: float, fn: Density2) -> np.ndarray:
    """Compact ``d/dsigma fn(p, kappa)`` using half-node values of ``fn``."""
    n = kappa.shape[0]
    flux = _half_node_flux(kappa, length, fn)
    return (flux - np.roll(flux, 1)) * n / length


def intrinsic_gradient_first_order(frame: CurveFrame, length: float, density: FirstOrderDensity) -> IntrinsicField:
    """``(-d/dsigma F1 + F0, (F - F1 p) / g)`` on the scaled grid."""
    kappa = frame.kappa
    return intrinsic_gradient_arrays(kappa, length, density)


def intrinsic_gradient_arrays(kappa: np.ndarray, length: float, density: FirstOrderDensity) -> IntrinsicField:
    p = d1(kappa) / length
    dk = -divergence_of_flux(kappa, length, density.f1) + density.f0(p, kappa)
    dg = (density.f(p, kappa) - density.f1(p, kappa) * p) / length
    return IntrinsicField(np.asarray(dk, float), np.asarray(dg, float))


def intrinsic_hessian_apply_first_order(
    frame: CurveFrame, length: float, density: FirstOrderDensity, u1: IntrinsicField
) -> IntrinsicField:
    """Apply the self-adjoint 2x2 operator Hessian of a first-order energy."""
    kappa = frame.kappa
    n = kappa.shape[0]
    g = length
    p = d1(kappa) / g
    f0 = density.f0(p, kappa)
    f10 = density.f10(p, kappa)
    f11 = density.f11(p, kappa)
    f00 = density.f00(p, kappa)
    k1, g1 = u1.dkappa, u1.dg

    # -(d/dsigma)(F11 d k1/dsigma) in compact form
    f11_half = _half_node_flux(kappa, length, density.f11)
    flux = f11_half * (np.roll(k1, -1) - k1) * n / g
    diffusion = -(flux - np.roll(flux, 1)) * n / g
    grad_k1 = d1(k1) / g

    h11 = diffusion - d1(f10 * k1) / g + f10 * grad_k1 + f00 * k1
    a = f11 * p / g
    h12 = d1(a * g1) / g - f10 * p / g * g1 + f0 / g * g1
    h21 = (-f11 * p * grad_k1 - f10 * p * k1 + f0 * k1) / g
    h22 = f11 * (p / g) ** 2 * g1
    return IntrinsicField(h11 + h12, h21 + h22)


def perimeter_hessian_apply(length: float, penalty: PerimeterPenalty, u1: IntrinsicField) -> IntrinsicField:
    """Rank-one metric block ``beta (int g1 ds)^2`` of the perimeter penalty."""
    total = integrate_surface(u1.dg, length) / length
    return IntrinsicField(np.zeros_like(u1.dkappa), np.full_like(u1.dg, penalty.beta * total / length))


# ---------------------------------------------------------------------------
# faceting


@dataclass(frozen=True)
class FacetingParams:
    alpha: float
    beta: float
    kappa_star: float
    l_star: float
    well_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.alpha <= 0 or self.kappa_star <= 0 or self.l_star <= 0 or self.well_scale <= 0:
            raise ValueError("alpha, kappa_star, l_star and well_scale must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    def density(self) -> FirstOrderDensity:
        return faceting_density(self.alpha, self.kappa_star, self.well_scale)

    def perimeter(self) -> PerimeterPenalty:
        return PerimeterPenalty(self.beta, self.l_star)


def faceting_energy(frame: CurveFrame, length: float, p: FacetingParams) -> float:
    return energy_first_order(frame, length, p.density()) + p.perimeter().energy(length)


def faceting_gradient(frame: CurveFrame, length: float, p: FacetingParams) -> IntrinsicField:
    kappa = frame.kappa
    a2 = p.alpha * p.alpha
    w, wp, _ = double_well(kappa, p.kappa_star, p.well_scale)
    grad = d1(kappa) / length
    dk = -a2 * d2(kappa) / length**2 + wp
    dg = (-0.5 * a2 * grad * grad + w + p.perimeter().tension(length)) / length
    return IntrinsicField(dk, dg)


def canham_helfrich_energy(frame: CurveFrame, length: float, beta: float) -> float:
    return energy_first_order(frame, length, canham_helfrich_density(beta))


# ---------------------------------------------------------------------------
# two-point interaction


@dataclass(frozen=True)
class TwoPointKernel:
    """``A(l) = a0 (1 - l / (a l*)^2) exp(-l / l*^2)`` in the squared distance ``l``."""

    a0: float
    ell_star: float
    a: float = 1.0
    cutoff_radius: float | None = None

    def __post_init__(self) -> None:
        if self.a0 <= 0 or self.ell_star <= 0 or self.a <= 0:
            raise ValueError("a0, ell_star and a must be positive")

    @property
    def cutoff(self) -> float:
        return 6.0 * self.ell_star if self.cutoff_radius is None else float(self.cutoff_radius)

    @property
    def ell_min(self) -> float:
        return self.ell_star**2 * (1.0 + self.a**2)


def kernel_eval(k: TwoPointKernel, ell: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
    """Kernel value and derivative in the squared distance, zero beyond the cutoff."""
    ell = np.asarray(ell, dtype=float)
    ls2 = k.ell_star**2
    a2 = k.a**2
    e = np.exp(-ell / ls2)
    inside = ell <= k.cutoff**2
    val = np.where(inside, k.a0 * (1.0 - ell / (a2 * ls2)) * e, 0.0)
    der = np.where(inside, k.a0 * (ell / (a2 * ls2 * ls2) - (1.0 + a2) / (a2 * ls2)) * e, 0.0)
    return val, der


def kernel_second_derivative(k: TwoPointKernel, ell: np.ndarray | float) -> np.ndarray:
    ell = np.asarray(ell, dtype=float)
    ls2 = k.ell_star**2
    a2 = k.a**2
    e = np.exp(-ell / ls2)
    val = k.a0 * ((2.0 + a2) / (a2 * ls2 * ls2) - ell / (a2 * ls2**3)) * e
    return np.where(ell <= k.cutoff**2, val, 0.0)


def _pair_terms(
    xi: np.ndarray, xj: np.ndarray, wj: np.ndarray, k: TwoPointKernel
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pair contributions; identical arithmetic for brute-force and cell-list paths."""
    dx = xi[..., 0] - xj[..., 0]
    dy = xi[..., 1] - xj[..., 1]
    ell = dx * dx + dy * dy
    a, ap = kernel_eval(k, ell)
    c = 4.0 * ap * wj
    return c * dx, c * dy, 2.0 * a * wj


def _sequential_sum(terms: np.ndarray) -> np.ndarray:
    # add.accumulate sums strictly left to right, so inserting exact zeros
    # (pairs beyond the cutoff) leaves every partial sum unchanged
    return np.add.accumulate(terms, axis=1)[:, -1]


def twopoint_fields_weighted(
    positions: np.ndarray,
    weights: np.ndarray,
    k: TwoPointKernel,
    method: str = "auto",
) -> tuple[np.ndarray, np.ndarray]:
    """Force ``4 sum_j A'(l_ij) d_ij w_j`` and density ``2 sum_j A(l_ij) w_j`` per node.

    ``method`` is ``brute``, ``cells`` or ``auto``.  Both paths sum each row
    in ascending ``j`` order and give bit-identical results.
    """
    x = np.asarray(positions, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), (x.shape[0],))
    n = x.shape[0]
    if method == "auto":
        span = float(np.max(np.ptp(x, axis=0)))
        method = "cells" if n > 256 and span > 4.0 * k.cutoff else "brute"
    if method == "brute":
        fx, fy, b = _pair_terms(x[:, None, :], x[None, :, :], w[None, :], k)
        force = np.column_stack([_sequential_sum(fx), _sequential_sum(fy)])
        return force, _sequential_sum(b)
    if method != "cells":
        raise ValueError(f"unknown two-point method {method!r}")
    cand = _cell_candidates(x, k.cutoff)
    valid = cand >= 0
    safe = np.where(valid, cand, 0)
    fx, fy, b = _pair_terms(x[:, None, :], x[safe], w[safe], k)
    fx = np.where(valid, fx, 0.0)
    fy = np.where(valid, fy, 0.0)
    b = np.where(valid, b, 0.0)
    force = np.column_stack([_sequential_sum(fx), _sequential_sum(fy)])
    return force, _sequential_sum(b)


def _cell_candidates(x: np.ndarray, cutoff: float) -> np.ndarray:
    """Sorted neighbour candidates per node from a uniform cell grid, padded with -1."""
    cell = np.floor((x - x.min(axis=0)) / cutoff).astype(np.int64)
    ncx = int(cell[:, 0].max()) + 1
    key = cell[:, 0] + (ncx + 2) * cell[:, 1]
    order = np.argsort(key, kind="stable")
    sorted_keys = key[order]
    lists = []
    for i in range(x.shape[0]):
        found = []
        for ox in (-1, 0, 1):
            for oy in (-1, 0, 1):
                kk = key[i] + ox + (ncx + 2) * oy
                lo = np.searchsorted(sorted_keys, kk, side="left")
                hi = np.searchsorted(sorted_keys, kk, side="right")
                if hi > lo:
                    found.append(order[lo:hi])
        lists.append(np.sort(np.concatenate(found)))
    width = max(len(c) for c in lists)
    out = np.full((x.shape[0], width), -1, dtype=np.int64)
    for i, c in enumerate(lists):
        out[i, : len(c)] = c
    return out


def twopoint_fields(
    curve: ClosedCurve, frame: CurveFrame, length: float, k: TwoPointKernel, method: str = "auto"
) -> tuple[np.ndarray, np.ndarray]:
    n = curve.n_points
    return twopoint_fields_weighted(curve.positions, np.full(n, length / n), k, method)


def twopoint_field_derivatives(
    positions: np.ndarray, weights: np.ndarray, k: TwoPointKernel
) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the force and density fields with respect to node positions.

    Returns ``dforce[i, j, a, b] = d force_i[a] / d x_j[b]`` and
    ``ddens[i, j, b] = d B_i / d x_j[b]`` with weights held fixed.
    """
    x = np.asarray(positions, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), (x.shape[0],))
    d = x[:, None, :] - x[None, :, :]
    ell = np.einsum("ijk,ijk->ij", d, d)
    _, ap = kernel_eval(k, ell)
    app = kernel_second_derivative(k, ell)
    cw = 4.0 * w[None, :]
    # derivative of 4 A'(l) d w_j with respect to x_j (d = x_i - x_j)
    off = -cw[..., None, None] * (
        2.0 * app[..., None, None] * d[..., :, None] * d[..., None, :] + ap[..., None, None] * np.eye(2)
    )
    dforce = off.copy()
    idx = np.arange(x.shape[0])
    dforce[idx, idx] = -np.sum(off, axis=1) + off[idx, idx]
    offb = -2.0 * w[None, :, None] * 2.0 * ap[..., None] * d
    ddens = offb.copy()
    ddens[idx, idx] = -np.sum(offb, axis=1) + offb[idx, idx]
    return dforce, ddens


def energy_twopoint_weighted(positions: np.ndarray, weights: np.ndarray, k: TwoPointKernel) -> float:
    x = np.asarray(positions, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), (x.shape[0],))
    d = x[:, None, :] - x[None, :, :]
    a, _ = kernel_eval(k, np.einsum("ijk,ijk->ij", d, d))
    return float(w @ a @ w)


def energy_twopoint(curve: ClosedCurve, frame: CurveFrame, length: float, k: TwoPointKernel) -> float:
    n = curve.n_points
    return energy_twopoint_weighted(curve.positions, np.full(n, length / n), k)


@dataclass(frozen=True)
class ChaParams:
    """Bending, perimeter and two-point parameters of the adhesion-repulsion model."""

    kernel: TwoPointKernel
    epsilon: float
    beta: float
    rho: float
    gamma0_length: float
    twopoint_method: str = field(default="auto", compare=False)

    def __post_init__(self) -> None:
        if self.epsilon < 0 or self.beta < 0:
            raise ValueError("epsilon and beta must be non-negative")
        if self.rho < 1:
            raise ValueError("rho must be at least 1")
        if self.gamma0_length <= 0:
            raise ValueError("gamma0_length must be positive")

    @property
    def target_length(self) -> float:
        return self.rho * self.gamma0_length

    def perimeter(self) -> PerimeterPenalty:
        return PerimeterPenalty(self.beta, self.target_length)


def cha_energy(curve: ClosedCurve, frame: CurveFrame, length: float, p: ChaParams) -> float:
    bending = energy_first_order(frame, length, canham_helfrich_density(0.0, p.epsilon))
    return energy_twopoint(curve, frame, length, p.kernel) + p.perimeter().energy(length) + bending


def extrinsic_gradient_cha(curve: ClosedCurve, frame: CurveFrame, length: float, p: ChaParams) -> ExtrinsicVelocity:
    """Normal slot ``A.n + kappa B + beta (L - rho L0) kappa - eps (Lap kappa + kappa^3 / 2)``; tangential slot 0."""
    kappa = frame.kappa
    force, dens = twopoint_fields(curve, frame, length, p.kernel, p.twopoint_method)
    adhesion = np.einsum("ij,ij->i", force, frame.normal) + kappa * dens
    local = -p.epsilon * (d2(kappa) / length**2 + 0.5 * kappa**3) + p.perimeter().tension(length) * kappa
    return ExtrinsicVelocity(adhesion + local, np.zeros_like(kappa))


def near_contact_dstar(a: float) -> float:
    """Equilibrium separation of two adhering sheets in units of ``ell_star``."""
    c0 = math.sqrt(math.pi) / 2.0
    c1 = math.sqrt(math.pi) / 4.0
    return math.sqrt(a * a + 1.0 - c1 / c0)


# ---------------------------------------------------------------------------
# energies of arbitrarily parameterized polygons (used by finite-difference oracles)


@dataclass(frozen=True)
class GeneralMetric:
    """Node curvature, metric ``g_j`` and quadrature weights of a polygon in any parameterization."""

    kappa: np.ndarray
    g: np.ndarray
    weights: np.ndarray
    normal: np.ndarray
    length: float


def general_metric(positions: np.ndarray) -> GeneralMetric:
    x = np.asarray(positions, dtype=float)
    n = x.shape[0]
    chords = np.linalg.norm(np.roll(x, -1, axis=0) - x, axis=1)
    weights = 0.5 * (chords + np.roll(chords, 1))
    g = weights * n
    dx = d1(x)
    kappa = -np.einsum("ij,ij->i", d2(x), perp(dx)) / g**3
    normal = perp(dx / np.linalg.norm(dx, axis=1)[:, None])
    return GeneralMetric(kappa, g, weights, normal, float(np.sum(chords)))


def first_order_energy_of_positions(
    positions: np.ndarray, density: FirstOrderDensity, penalty: PerimeterPenalty | None = None
) -> float:
    m = general_metric(positions)
    e = first_order_energy_general(m.kappa, m.g, density)
    if penalty is not None:
        e += penalty.energy(m.length)
    return e


def cha_energy_of_positions(positions: np.ndarray, p: ChaParams) -> float:
    m = general_metric(positions)
    bending = first_order_energy_general(m.kappa, m.g, canham_helfrich_density(0.0, p.epsilon))
    return energy_twopoint_weighted(positions, m.weights, p.kernel) + p.perimeter().energy(m.length) + bending
