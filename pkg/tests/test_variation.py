from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curveflow.audit import (
    ROUNDOFF,
    adjoint_constraint_errors,
    observed_orders,
    rigid_generator_errors,
    smooth_intrinsic,
    smooth_velocity,
    trefoil,
)
from curveflow.geometry import circle, compute_frame, resample_scaled_arclength
from curveflow.variation import (
    D_adjoint_apply,
    D_apply,
    DegenerateCurveError,
    ExtrinsicVelocity,
    IntrinsicField,
    M_adjoint_apply,
    M_adjoint_pseudo_solve,
    M_apply,
    M_matrix,
    M_pseudo_solve,
    closure_constraints,
    constraint_basis,
    constraint_hessian_quadform,
    inner,
    inner_ext,
    lagrange_fit,
    project_out_constraints,
    rigid_body_generators,
)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.sampled_from([32, 64, 100]))
def test_discrete_adjointness_is_exact(seed, n):
    rng = np.random.default_rng(seed)
    curve = trefoil(n, 0.2)
    frame = compute_frame(curve)
    L = curve.length
    v = ExtrinsicVelocity(rng.standard_normal(n), rng.standard_normal(n))
    phi = IntrinsicField(rng.standard_normal(n), rng.standard_normal(n))
    lhs = inner(M_apply(frame, L, v), phi, L)
    rhs = inner_ext(v, M_adjoint_apply(frame, L, phi), L)
    assert abs(lhs - rhs) <= 1e-11 * max(1.0, abs(lhs))


def test_matrix_matches_operator_and_transpose_is_adjoint():
    curve = trefoil(24, 0.2)
    frame = compute_frame(curve)
    m = M_matrix(frame, curve.length)
    assert m.shape == (48, 48)
    rng = np.random.default_rng(0)
    v = ExtrinsicVelocity(rng.standard_normal(24), rng.standard_normal(24))
    u = M_apply(frame, curve.length, v)
    assert np.allclose(m @ np.concatenate([v.vn, v.vtau]), np.concatenate([u.dkappa, u.dg]), atol=1e-10)
    phi = IntrinsicField(rng.standard_normal(24), rng.standard_normal(24))
    w = M_adjoint_apply(frame, curve.length, phi)
    assert np.allclose(m.T @ np.concatenate([phi.dkappa, phi.dg]), np.concatenate([w.vn, w.vtau]), atol=1e-9)


def test_pseudo_solves_invert_on_range():
    curve = trefoil(32, 0.2)
    frame = compute_frame(curve)
    L = curve.length
    rng = np.random.default_rng(1)
    v = smooth_velocity(32, rng)
    u = M_apply(frame, L, v)
    back = M_pseudo_solve(frame, L, u)
    assert M_apply(frame, L, back).__sub__(u).max_abs() < 1e-8 * max(1.0, u.max_abs())
    phi = smooth_intrinsic(32, rng)
    w = M_adjoint_apply(frame, L, phi)
    back_phi = M_adjoint_pseudo_solve(frame, L, w)
    w2 = M_adjoint_apply(frame, L, back_phi)
    assert max(np.max(np.abs(w2.vn - w.vn)), np.max(np.abs(w2.vtau - w.vtau))) < 1e-8 * max(1.0, w.max_abs())


@pytest.mark.parametrize("family", ["trefoil", "circle"])
def test_rigid_generators_annihilated_at_second_order(family):
    errs = rigid_generator_errors(family, [128, 256, 512])
    for i, series in errs.items():
        if max(series) < ROUNDOFF:
            continue
        orders = observed_orders(series)
        assert all(1.7 < p < 2.3 for p in orders), (i, series, orders)


def test_adjoint_kills_constraint_gradients():
    errs = adjoint_constraint_errors("trefoil", [128, 256, 512])
    # the curvature-closure gradient is annihilated exactly
    assert max(errs[2]) < ROUNDOFF
    for i in (0, 1):
        orders = observed_orders(errs[i])
        assert all(1.7 < p < 2.3 for p in orders), errs[i]


def test_rigid_generators_of_circle():
    curve = circle(1.0, 64)
    frame = compute_frame(curve)
    gens = rigid_body_generators(frame, curve)
    # rotation about the center is purely tangential
    assert np.max(np.abs(gens[2].vn)) < 1e-12
    assert np.allclose(gens[2].vtau, -1.0)


def test_integral_operator_adjoint_pair():
    rng = np.random.default_rng(4)
    n, L = 50, 3.0
    f, h = rng.standard_normal(n), rng.standard_normal(n)
    # discrete pairing identity of the cumulative integral and its tail form
    total = np.sum(f) * L / n
    assert np.allclose(D_apply(f, L) + D_adjoint_apply(f, L), total)
    assert D_apply(f, L)[0] == 0.0
    assert np.isfinite(np.sum(D_apply(h, L) * f))


def _hessian_gap(n: int) -> tuple[np.ndarray, float, float]:
    curve = resample_scaled_arclength(trefoil(n, 0.2))
    frame = compute_frame(curve)
    L = curve.length
    theta0 = float(np.arctan2(frame.tangent[0, 1], frame.tangent[0, 0]))
    u1 = smooth_intrinsic(n, np.random.default_rng(7))
    g = np.full(n, L)

    def c(delta):
        return closure_constraints(frame.kappa + delta * u1.dkappa, g + delta * u1.dg, theta0)

    h = 1e-3
    fd = (c(h) - 2 * c(0.0) + c(-h)) / h**2
    exact = np.array([constraint_hessian_quadform(frame, L, j, u1) for j in (1, 2, 3)])
    return np.abs(fd - exact), float(np.sum(u1.dkappa * u1.dg) / n), exact[2]


def test_constraint_hessian_matches_finite_differences():
    gaps = [_hessian_gap(n) for n in (256, 512, 1024)]
    # tangent-closure components: the cumulative trapezoid and its tail form
    # are adjoint only up to O(h), so the gap must shrink at least at first order
    for j in (0, 1):
        series = [gap[0][j] for gap in gaps]
        orders = observed_orders(series)
        assert all(0.8 < p < 2.3 for p in orders), series
    assert gaps[-1][0][0] < 1e-3 and gaps[-1][0][1] < 1e-3
    # the curvature-closure functional is bilinear in (kappa, g): its second
    # variation is twice the plain pairing on every grid
    for gap, k1g1, exact3 in gaps:
        assert gap[2] < 1e-6
        assert abs(exact3 - 2 * k1g1) < 1e-12 * max(1.0, abs(k1g1))


def test_constraint_hessian_rejects_bad_index():
    curve = circle(1.0, 16)
    frame = compute_frame(curve)
    u1 = IntrinsicField(np.ones(16), np.ones(16))
    with pytest.raises(ValueError):
        constraint_hessian_quadform(frame, curve.length, 4, u1)


def test_projection_is_orthogonal_to_constraints():
    curve = trefoil(128, 0.2)
    frame = compute_frame(curve)
    L = curve.length
    basis = constraint_basis(frame, L)
    u = smooth_intrinsic(128, np.random.default_rng(2))
    p = project_out_constraints(basis, u, L)
    for psi in basis.as_list():
        assert abs(inner(p, psi, L)) < 1e-10 * max(1.0, inner(u, u, L))
    lam, rem = lagrange_fit(basis, u, L)
    assert lam.values.shape == (3,)
    assert rem >= 0.0


def test_degenerate_gram_raises():
    curve = circle(1.0, 32)
    frame = compute_frame(curve)
    basis = constraint_basis(frame, curve.length)
    # duplicate one gradient so the Gram matrix is singular
    singular = type(basis)(basis.psi1, basis.psi1, basis.psi3)
    with pytest.raises(DegenerateCurveError):
        lagrange_fit(singular, basis.psi2, curve.length)
