from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapless_av.geometry import (
    Pose2D,
    QuadraticCenterline,
    RasterGeometry,
    TrackingError,
    Waypoint,
    bev_project,
    eval_centerline,
    sample_waypoints,
    tracking_errors,
    tracking_point,
    wrap_angle,
)

finite = st.floats(-50.0, 50.0, allow_nan=False)
angles = st.floats(-20.0, 20.0, allow_nan=False)


def straight_path(n: int = 41, spacing: float = 0.5, speed: float = 2.5) -> list[Waypoint]:
    return [Waypoint(Pose2D(i * spacing, 0.0, 0.0), 0.0, speed) for i in range(n)]


# -- eval_centerline ---------------------------------------------------------
@pytest.mark.parametrize(
    "coef, x, expected",
    [((0.0, 0.0, 0.0), 5.0, 0.0), ((0.0, 0.0, 1.5), 10.0, 1.5), ((0.01, 0.1, 0.5), 10.0, 2.5)],
)
def test_eval_centerline_examples(coef, x, expected):
    assert eval_centerline(QuadraticCenterline(*coef), x) == pytest.approx(expected, abs=1e-12)


def test_eval_centerline_vectorized_matches_scalar():
    c = QuadraticCenterline(0.02, -0.3, 1.1)
    xs = np.linspace(-3, 12, 17)
    np.testing.assert_allclose(eval_centerline(c, xs), [eval_centerline(c, float(x)) for x in xs])


def test_centerline_rejects_curvature_above_bound():
    with pytest.raises(ValueError):
        QuadraticCenterline(0.2, 0.0, 0.0)
    assert QuadraticCenterline(0.2, 0.0, 0.0, a_max=0.25).a == 0.2


def test_centerline_rejects_non_finite():
    with pytest.raises(ValueError):
        QuadraticCenterline(0.0, math.nan, 0.0)


# -- sample_waypoints --------------------------------------------------------
def test_sample_zero_centerline():
    path = sample_waypoints(QuadraticCenterline(), 1.0, 3.0)
    assert [w.position.x for w in path] == [0.0, 1.0, 2.0, 3.0]
    assert all(w.position.y == 0.0 and w.curvature == 0.0 for w in path)


def test_sample_curvature_closed_form():
    c = QuadraticCenterline(0.01, 0.2, 0.0)
    path = sample_waypoints(c, 0.5, 5.0)
    assert path[0].curvature == pytest.approx(2 * 0.01 / (1 + 0.2**2) ** 1.5, rel=1e-12)


def test_sample_short_horizon_gives_single_point():
    path = sample_waypoints(QuadraticCenterline(0.0, 0.0, 0.7), 1.0, 0.5)
    assert len(path) == 1
    assert path[0].position.x == 0.0


def test_waypoint_speed_nonnegative():
    with pytest.raises(ValueError):
        Waypoint(Pose2D(), 0.0, -1.0)


# -- poses and angles --------------------------------------------------------
@given(angles)
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


def test_wrap_angle_boundary():
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert TrackingError(0.0, 3 * math.pi).e_heading == pytest.approx(math.pi)


@given(finite, finite, angles, finite, finite)
def test_pose_round_trip(x, y, h, px, py):
    pose = Pose2D(x, y, h)
    pts = np.array([[px, py]])
    np.testing.assert_allclose(pose.to_local(pose.to_world(pts)), pts, atol=1e-9)


@given(finite, finite, angles, finite, finite, angles)
def test_compose_inverts_relative(x, y, h, ox, oy, oh):
    ref = Pose2D(x, y, h)
    other = Pose2D(ox, oy, oh)
    back = ref.compose(other.relative_to(ref))
    assert back.x == pytest.approx(other.x, abs=1e-9)
    assert back.y == pytest.approx(other.y, abs=1e-9)
    assert wrap_angle(back.heading - other.heading) == pytest.approx(0.0, abs=1e-9)


# -- tracking errors ---------------------------------------------------------
def test_tracking_error_on_path():
    err = tracking_errors(Pose2D(2.0, 0.0, 0.0), straight_path(), 1.0)
    assert (err.e_lateral, err.e_heading) == pytest.approx((0.0, 0.0), abs=1e-12)


def test_tracking_error_left_is_positive():
    err = tracking_errors(Pose2D(2.0, 1.0, 0.0), straight_path(), 1.0)
    assert err.e_lateral == pytest.approx(1.0)
    assert err.e_heading == pytest.approx(0.0)


def test_tracking_error_heading_offset():
    err = tracking_errors(Pose2D(2.0, 0.0, 0.1), straight_path(), 1.0)
    assert err.e_lateral == pytest.approx(0.0, abs=1e-12)
    assert err.e_heading == pytest.approx(0.1)


def test_tracking_point_lookahead_along_arc():
    tp = tracking_point(straight_path(), Pose2D(2.0, 0.3, 0.0), 1.25)
    assert tp.x == pytest.approx(3.25)


def test_tracking_point_saturates_at_last_waypoint():
    path = straight_path(n=5)
    tp = tracking_point(path, Pose2D(1.0, 0.0, 0.0), 100.0)
    assert (tp.x, tp.index) == (path[-1].position.x, 4)


def test_tracking_errors_empty_path():
    with pytest.raises(ValueError):
        tracking_errors(Pose2D(), [], 1.0)


@settings(max_examples=60, deadline=None)
@given(finite, finite, angles, st.floats(-1.0, 1.0), st.floats(-0.5, 0.5), st.floats(0.0, 5.0))
def test_tracking_errors_rigid_invariance(tx, ty, rot, lat, dh, lookahead):
    # curved path so the invariance is not trivially satisfied
    path = sample_waypoints(QuadraticCenterline(0.03, 0.1, 0.0), 0.25, 12.0, 2.0)
    pose = Pose2D(3.0, 0.4 + lat, 0.2 + dh)
    frame = Pose2D(tx, ty, rot)
    moved_path = [Waypoint(frame.compose(w.position), w.curvature, w.speed) for w in path]
    a = tracking_errors(pose, path, lookahead)
    b = tracking_errors(frame.compose(pose), moved_path, lookahead)
    assert b.e_lateral == pytest.approx(a.e_lateral, abs=1e-9)
    assert wrap_angle(b.e_heading - a.e_heading) == pytest.approx(0.0, abs=1e-9)


# -- raster projection -------------------------------------------------------
def test_bev_project_cell_center():
    assert bev_project((0, 0), RasterGeometry(10, 10, 0.1)) == pytest.approx((0.05, 0.05))


def test_bev_project_row_offset():
    x, _ = bev_project((4, 0), RasterGeometry(10, 10, 0.25))
    assert x == pytest.approx(1.125)


def test_bev_project_respects_origin():
    assert bev_project((0, 2), RasterGeometry(5, 5, 0.5, (2.0, -1.0))) == pytest.approx((2.25, 0.25))


@pytest.mark.parametrize("pixel", [(-1, 0), (0, 10), (10, 0)])
def test_bev_project_out_of_bounds(pixel):
    with pytest.raises(IndexError):
        bev_project(pixel, RasterGeometry(10, 10, 0.1))
