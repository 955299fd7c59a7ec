from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curveflow.geometry import (
    ClosedCurve,
    CurveError,
    ResampleError,
    build_curve,
    circle,
    closure_residual,
    compute_frame,
    crenelated,
    cumulative_integral,
    curve_from_intrinsic,
    d1,
    d2,
    jittered_circle,
    min_pair_distance,
    polar,
    read_curve_csv,
    resample_iterations,
    resample_scaled_arclength,
    self_intersections,
    write_curve_csv,
)


def test_circle_curvature_positive_and_second_order():
    errs = []
    for n in (32, 64, 128):
        f = compute_frame(circle(2.0, n))
        errs.append(np.max(np.abs(f.kappa - 0.5)))
        assert np.all(f.kappa > 0)
    assert 3.8 < errs[0] / errs[1] < 4.2
    assert 3.8 < errs[1] / errs[2] < 4.2


def test_normal_points_outward_on_ccw_circle():
    c = circle(1.0, 40)
    f = compute_frame(c)
    radial = c.positions / np.linalg.norm(c.positions, axis=1)[:, None]
    assert np.allclose(np.einsum("ij,ij->i", f.normal, radial), 1.0, atol=1e-12)


def test_difference_stencils_on_trig_function():
    n = 256
    s = np.arange(n) / n
    f = np.sin(2 * math.pi * s)
    # exact symbols of the centered stencils
    assert np.allclose(d1(f), n * math.sin(2 * math.pi / n) * np.cos(2 * math.pi * s), atol=1e-10)
    assert np.allclose(d2(f), -2 * n * n * (1 - math.cos(2 * math.pi / n)) * f, atol=1e-8)


def test_cumulative_integral_starts_at_zero_and_matches_trapezoid():
    n = 50
    f = np.linspace(1.0, 2.0, n)
    out = cumulative_integral(f, 3.0)
    assert out[0] == 0.0
    assert out.shape == (n,)
    assert np.all(np.diff(out) > 0)


@settings(max_examples=25, deadline=None)
@given(
    a2=st.floats(-0.15, 0.15),
    a3=st.floats(-0.1, 0.1),
    phase=st.floats(0, 2 * math.pi),
    n=st.integers(16, 200),
)
def test_resampling_equalises_chords(a2, a3, phase, n):
    raw = build_curve({"kind": "polar", "n": n, "modes": [[2, a2, phase], [3, a3]]})
    out = resample_scaled_arclength(raw)
    chords = out.chords
    assert np.max(np.abs(chords - out.length / n)) <= 1e-11
    # node 0 stays put
    assert np.allclose(out.positions[0], raw.positions[0], atol=1e-12)


def test_resampling_converges_quickly_on_jittered_circle():
    c = jittered_circle(1.0, 64, 0.01, seed=3)
    assert resample_iterations(c) <= 6


def test_resampling_smoothing_fallback_handles_hard_input():
    # a violently jittered polygon stalls plain Newton; smoothing must rescue it
    c = jittered_circle(1.0, 64, 0.08, seed=1)
    out = resample_scaled_arclength(c)
    assert np.max(np.abs(out.chords - out.length / 64)) <= 1e-11


def test_resampling_raises_after_retries(monkeypatch):
    import curveflow.geometry as geo

    def always_fail(pts, n, tol, max_iter):
        raise ResampleError("stalled", 1.0)

    monkeypatch.setattr(geo, "_resample_once", always_fail)
    with pytest.raises(ResampleError):
        geo.resample_scaled_arclength(circle(1.0, 16))


def test_intrinsic_round_trip_of_circle():
    gaps = []
    for n in (64, 128):
        c = curve_from_intrinsic(np.ones(n), 2 * math.pi)
        f = compute_frame(c)
        tau, _ = closure_residual(f, c.length)
        assert np.max(np.abs(tau)) < 1e-12
        assert np.ptp(c.chords) < 1e-12
        gaps.append(2 * math.pi - c.length)
    # inscribed polygon: perimeter deficit shrinks like h^2
    assert 3.9 < gaps[0] / gaps[1] < 4.1


def test_closed_curve_validation():
    with pytest.raises(CurveError):
        ClosedCurve(np.zeros((4, 2)))
    with pytest.raises(CurveError):
        ClosedCurve(np.zeros((10, 3)))
    bad = circle(1.0, 10).positions.copy()
    bad[3, 0] = np.nan
    with pytest.raises(CurveError):
        ClosedCurve(bad)


def test_build_curve_errors():
    with pytest.raises(CurveError):
        build_curve({"kind": "star", "n": 10})
    with pytest.raises(CurveError):
        build_curve({"kind": "circle"})


def test_crenelated_has_requested_lobes():
    c = crenelated(lobes=13, amplitude=0.05, n=520)
    r = np.linalg.norm(c.positions, axis=1)
    above = r > 1.0
    assert int(np.sum(above != np.roll(above, 1))) == 26


def test_polar_table_input():
    theta = 2 * math.pi * np.arange(45) / 45
    c = polar(1.0 + 0.1 * np.cos(2 * theta), 45)
    assert c.n_points == 45
    with pytest.raises(CurveError):
        polar(np.ones(90), 45)
    with pytest.raises(CurveError):
        polar(-np.ones(45), 45)


def test_csv_round_trip(tmp_path):
    c = resample_scaled_arclength(build_curve({"kind": "polar", "n": 40, "modes": [[3, 0.2]]}))
    path = tmp_path / "curve.csv"
    write_curve_csv(path, c)
    back = read_curve_csv(path)
    assert np.array_equal(back.positions, c.positions)
    # file-based shape goes through the same reader
    again = build_curve({"kind": "file", "path": str(path)})
    assert np.array_equal(again.positions, c.positions)


def test_csv_rejects_bad_s_column(tmp_path):
    path = tmp_path / "bad.csv"
    rows = ["s,x,y"] + [f"{0.5 * j / 10},{math.cos(j)},{math.sin(j)}" for j in range(10)]
    path.write_text("\n".join(rows))
    with pytest.raises(CurveError):
        read_curve_csv(path)


def test_self_intersections_figure_eight():
    t = 2 * math.pi * np.arange(80) / 80
    eight = ClosedCurve(np.column_stack([np.sin(t), np.sin(t) * np.cos(t)]))
    assert self_intersections(eight) == 1
    assert self_intersections(circle(1.0, 80)) == 0


def test_min_pair_distance_of_circle_is_diameter():
    c = circle(1.0, 200)
    # with a half-length exclusion only the antipodal region remains
    assert abs(min_pair_distance(c, exclusion=0.45 * c.length) - 2.0) < 0.05
