"""Maps between extrinsic velocities and intrinsic rates of change.

An extrinsic velocity ``(vn, vtau)`` moves curve points along the normal and
tangent.  It induces rates ``(dkappa, dg)`` of the curvature and of the arc
length metric ``g``; on a scaled arc-length grid ``g`` equals the length
``L``.  The linear map is called ``M`` here, its dsigma-weighted adjoint
``M_adjoint``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    ClosedCurve,
    CurveFrame,
    cumulative_integral,
    integrate_surface,
    laplace_beltrami,
    surface_gradient,
)

GRAM_CONDITION_LIMIT = 1e10


class DegenerateCurveError(RuntimeError):
    """Constraint Gram matrix is numerically singular."""


@dataclass(frozen=True)
class IntrinsicField:
    dkappa: np.ndarray
    dg: np.ndarray

    def __add__(self, other: IntrinsicField) -> IntrinsicField:
        return IntrinsicField(self.dkappa + other.dkappa, self.dg + other.dg)

    def __sub__(self, other: IntrinsicField) -> IntrinsicField:
        return IntrinsicField(self.dkappa - other.dkappa, self.dg - other.dg)

    def __mul__(self, c: float) -> IntrinsicField:
        return IntrinsicField(c * self.dkappa, c * self.dg)

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(self.dkappa)), np.max(np.abs(self.dg))))


@dataclass(frozen=True)
class ExtrinsicVelocity:
    vn: np.ndarray
    vtau: np.ndarray

    def __add__(self, other: ExtrinsicVelocity) -> ExtrinsicVelocity:
        return ExtrinsicVelocity(self.vn + other.vn, self.vtau + other.vtau)

    def __mul__(self, c: float) -> ExtrinsicVelocity:
        return ExtrinsicVelocity(c * self.vn, c * self.vtau)

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(self.vn)), np.max(np.abs(self.vtau))))

    def displacement(self, frame: CurveFrame) -> np.ndarray:
        """Cartesian velocity ``vn * n + vtau * tau`` per node."""
        return self.vn[:, None] * frame.normal + self.vtau[:, None] * frame.tangent


@dataclass(frozen=True)
class ConstraintBasis:
    psi1: IntrinsicField
    psi2: IntrinsicField
    psi3: IntrinsicField

    def as_list(self) -> list[IntrinsicField]:
        return [self.psi1, self.psi2, self.psi3]


@dataclass(frozen=True)
class LagrangeMultiplier:
    values: np.ndarray


def inner(u: IntrinsicField, w: IntrinsicField, length: float) -> float:
    return integrate_surface(u.dkappa * w.dkappa + u.dg * w.dg, length)


def inner_ext(v: ExtrinsicVelocity, w: ExtrinsicVelocity, length: float) -> float:
    return integrate_surface(v.vn * w.vn + v.vtau * w.vtau, length)


# ---------------------------------------------------------------------------
# operators


def helmholtz_apply(kappa: np.ndarray, length: float, f: np.ndarray) -> np.ndarray:
    """``G f = -Laplace f - kappa^2 f``."""
    return -laplace_beltrami(f, length) - kappa * kappa * f


def M_apply(frame: CurveFrame, length: float, v: ExtrinsicVelocity) -> IntrinsicField:
    kappa = frame.kappa
    dkappa = helmholtz_apply(kappa, length, v.vn) + v.vtau * surface_gradient(kappa, length)
    dg = length * (surface_gradient(v.vtau, length) + kappa * v.vn)
    return IntrinsicField(dkappa, dg)


def M_adjoint_apply(frame: CurveFrame, length: float, phi: IntrinsicField) -> ExtrinsicVelocity:
    kappa = frame.kappa
    vn = helmholtz_apply(kappa, length, phi.dkappa) + length * kappa * phi.dg
    vtau = phi.dkappa * surface_gradient(kappa, length) - surface_gradient(length * phi.dg, length)
    return ExtrinsicVelocity(vn, vtau)


def M_matrix(frame: CurveFrame, length: float) -> np.ndarray:
    """Dense ``2N x 2N`` matrix of ``M`` acting on ``[vn, vtau]``."""
    n = frame.kappa.shape[0]
    eye = np.eye(n)
    cols = []
    for k in range(2 * n):
        e = eye[k % n]
        z = np.zeros(n)
        v = ExtrinsicVelocity(e, z) if k < n else ExtrinsicVelocity(z, e)
        u = M_apply(frame, length, v)
        cols.append(np.concatenate([u.dkappa, u.dg]))
    return np.column_stack(cols)


def M_pseudo_solve(frame: CurveFrame, length: float, u: IntrinsicField, rcond: float = 1e-10) -> ExtrinsicVelocity:
    """Minimum-norm least-squares ``v`` with ``M v ~ u``.

    The three rigid motions span the kernel of ``M``; the minimum-norm
    solution is the preimage in its orthogonal complement.
    """
    n = frame.kappa.shape[0]
    sol, *_ = np.linalg.lstsq(M_matrix(frame, length), np.concatenate([u.dkappa, u.dg]), rcond=rcond)
    return ExtrinsicVelocity(sol[:n], sol[n:])


def M_adjoint_pseudo_solve(
    frame: CurveFrame, length: float, v: ExtrinsicVelocity, rcond: float = 1e-10
) -> IntrinsicField:
    """Minimum-norm least-squares ``phi`` with ``M_adjoint phi ~ v``.

    With the uniform trapezoid weight the discrete adjoint is the matrix
    transpose of ``M``.
    """
    n = frame.kappa.shape[0]
    sol, *_ = np.linalg.lstsq(M_matrix(frame, length).T, np.concatenate([v.vn, v.vtau]), rcond=rcond)
    return IntrinsicField(sol[:n], sol[n:])


def rigid_body_generators(frame: CurveFrame, curve: ClosedCurve) -> list[ExtrinsicVelocity]:
    """Two translations and the rotation about the origin, as normal/tangential speeds."""
    n, tau = frame.normal, frame.tangent
    x = curve.positions
    return [
        ExtrinsicVelocity(n[:, 0].copy(), tau[:, 0].copy()),
        ExtrinsicVelocity(n[:, 1].copy(), tau[:, 1].copy()),
        ExtrinsicVelocity(np.einsum("ij,ij->i", x, tau), -np.einsum("ij,ij->i", x, n)),
    ]


def D_apply(field: np.ndarray, length: float) -> np.ndarray:
    """Integral from the base node: ``D f(s) = int_0^s f dsigma``."""
    return cumulative_integral(field, length)


def D_adjoint_apply(field: np.ndarray, length: float) -> np.ndarray:
    """Integral to the end of the period: ``int_s^1 f dsigma``."""
    field = np.asarray(field, dtype=float)
    total = np.sum(field, axis=0) * (length / field.shape[0])
    return total - cumulative_integral(field, length)


# ---------------------------------------------------------------------------
# closure constraints


def constraint_basis(frame: CurveFrame, length: float) -> ConstraintBasis:
    """Intrinsic gradients of the closure constraints.

    Components 1 and 2 come from ``int tau dsigma = 0``, component 3 from
    ``int kappa dsigma = 2 pi``.
    """
    kappa = frame.kappa
    dtau = -frame.normal  # derivative of tau(theta) with respect to theta
    psis = []
    for c in range(2):
        back = D_adjoint_apply(dtau[:, c], length)
        psis.append(IntrinsicField(back, kappa * back / length + frame.tangent[:, c] / length))
    psis.append(IntrinsicField(np.ones_like(kappa), kappa / length))
    return ConstraintBasis(*psis)


def closure_constraints(kappa: np.ndarray, g: np.ndarray, theta0: float = 0.0) -> np.ndarray:
    """Discrete closure functionals of an intrinsic state with a nonuniform metric ``g``.

    The tangent angle is ``theta0 + int_0^s kappa g ds`` (cumulative
    trapezoid).  Returns ``[int cos(theta) g ds, int sin(theta) g ds,
    int kappa g ds - 2 pi]``.
    """
    n = kappa.shape[0]
    theta = theta0 + cumulative_integral(kappa * g, 1.0)
    w = g / n
    return np.array([np.sum(np.cos(theta) * w), np.sum(np.sin(theta) * w), np.sum(kappa * w) - 2.0 * math.pi])


def constraint_hessian_quadform(frame: CurveFrame, length: float, j: int, u1: IntrinsicField) -> float:
    """Second derivative of closure functional ``j`` along ``U + delta * u1``.

    ``j`` is 1-based.  For ``j`` in {1, 2} with ``theta1 = D(k1 + kappa g1/g)``
    the value is ``<D^dag tau', 2 k1 g1/g> + 2 <tau' g1/g, theta1> -
    <tau, theta1^2>``; for ``j = 3`` it is ``2 <k1, g1/g>``.
    """
    if j not in (1, 2, 3):
        raise ValueError("constraint index must be 1, 2 or 3")
    k1, g1 = u1.dkappa, u1.dg
    rel = g1 / length
    if j == 3:
        return 2.0 * integrate_surface(k1 * rel, length)
    c = j - 1
    dtau = -frame.normal[:, c]
    tau = frame.tangent[:, c]
    theta1 = D_apply(k1 + frame.kappa * rel, length)
    return (
        integrate_surface(D_adjoint_apply(dtau, length) * 2.0 * k1 * rel, length)
        + 2.0 * integrate_surface(dtau * rel * theta1, length)
        - integrate_surface(tau * theta1 * theta1, length)
    )


def lagrange_fit(
    basis: ConstraintBasis, grad: IntrinsicField, length: float
) -> tuple[LagrangeMultiplier, float]:
    """Least-squares projection of ``grad`` onto the span of the constraint gradients.

    Returns the multipliers and the norm of the orthogonal remainder.
    """
    psis = basis.as_list()
    gram = np.array([[inner(a, b, length) for b in psis] for a in psis])
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > GRAM_CONDITION_LIMIT:
        raise DegenerateCurveError(f"constraint Gram matrix condition number {cond:.3e}")
    rhs = np.array([inner(a, grad, length) for a in psis])
    lam = np.linalg.solve(gram, rhs)
    rem = grad - (lam[0] * psis[0] + lam[1] * psis[1] + lam[2] * psis[2])
    return LagrangeMultiplier(lam), math.sqrt(max(inner(rem, rem, length), 0.0))


def project_out_constraints(basis: ConstraintBasis, u: IntrinsicField, length: float) -> IntrinsicField:
    """Component of ``u`` orthogonal to the constraint gradients (first-order admissible direction)."""
    lam, _ = lagrange_fit(basis, u, length)
    psis = basis.as_list()
    return u - (lam.values[0] * psis[0] + lam.values[1] * psis[1] + lam.values[2] * psis[2])
