from __future__ import annotations


import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapless_av.geometry import QuadraticCenterline
from mapless_av.planning import (
    BoundaryConditions,
    FsmInputs,
    FsmParams,
    FsmState,
    Mode,
    QuinticSpline,
    VelocityProfile,
    decel_profile,
    fsm_step,
    lane_change_length,
    max_lateral_accel,
    plan,
    solve_lane_change,
)

MIN_JERK = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0]


def constraint_residuals(sp: QuinticSpline, bc: BoundaryConditions) -> np.ndarray:
    return np.array([
        sp(bc.s0) - bc.y0, sp(bc.s0, 1) - bc.y_dot0, sp(bc.s0, 2) - bc.y_ddot0,
        sp(bc.sF) - bc.yF, sp(bc.sF, 1), sp(bc.sF, 2),
    ], dtype=float)


# -- quintic solver ----------------------------------------------------------
def test_homogeneous_bc_gives_zero_polynomial():
    sp = solve_lane_change(BoundaryConditions(0.0, 5.0))
    np.testing.assert_allclose(sp.m, 0.0, atol=1e-12)


def test_canonical_min_jerk():
    sp = solve_lane_change(BoundaryConditions(0.0, 1.0, yF=1.0))
    np.testing.assert_allclose(sp.m, MIN_JERK, atol=1e-9)


def test_domain_scaling():
    sp = solve_lane_change(BoundaryConditions(0.0, 2.0, yF=1.0))
    s = np.linspace(0, 2, 41)
    u = s / 2
    np.testing.assert_allclose(sp(s), 10 * u**3 - 15 * u**4 + 6 * u**5, atol=1e-12)


def test_invalid_domain():
    with pytest.raises(ValueError):
        BoundaryConditions(1.0, 1.0)
    with pytest.raises(ValueError):
        solve_lane_change(BoundaryConditions(0.0, 1e-7, yF=1.0))


bounded = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=1000, deadline=None)
@given(bounded, st.floats(0.1, 100.0), bounded, bounded, bounded, bounded)
def test_random_bc_satisfied(s0, span, y0, yd0, ydd0, yF):
    bc = BoundaryConditions(s0, s0 + span, y0, yd0, ydd0, yF)
    assert np.max(np.abs(constraint_residuals(solve_lane_change(bc), bc))) <= 1e-9


@pytest.mark.parametrize("i", range(6))
@pytest.mark.parametrize("delta", [1e-3, -1e-3])
def test_perturbed_coefficient_breaks_a_constraint(i, delta):
    bc = BoundaryConditions(0.5, 4.0, 0.2, 0.1, -0.05, 3.0)
    sp = solve_lane_change(bc)
    m = sp.m.copy()
    m[i] += delta
    assert np.max(np.abs(constraint_residuals(QuinticSpline(m, bc.s0, bc.sF), bc))) > 1e-9


def test_max_lateral_accel_cases():
    zero = solve_lane_change(BoundaryConditions(0.0, 1.0))
    canon = solve_lane_change(BoundaryConditions(0.0, 1.0, yF=1.0))
    assert max_lateral_accel(zero, 2.5) == 0.0
    assert max_lateral_accel(canon, 0.0) == 0.0
    s = np.arange(0.0, 1.0 + 1e-4, 1e-4)
    brute = 6.25 * np.max(np.abs(60 * s - 180 * s**2 + 120 * s**3))
    assert max_lateral_accel(canon, 2.5) == pytest.approx(brute, rel=1e-3)


# -- velocity profile --------------------------------------------------------
def test_decel_begins_at_braking_distance():
    assert decel_profile(2.5, 3.125, 1.0) == 2.5
    assert decel_profile(2.5, 3.12, 1.0) < 2.5
    assert decel_profile(2.5, 0.0, 1.0) == 0.0
    assert decel_profile(2.5, 1e9, 1.0) == 2.5
    assert decel_profile(2.5, -4.0, 1.0) == 0.0


@given(st.floats(0, 10), st.floats(-5, 50), st.floats(0.1, 5))
def test_decel_never_exceeds_cruise(v0, d, a):
    v = decel_profile(v0, d, a)
    assert 0.0 <= v <= v0 + 1e-12


# -- behaviour FSM -------------------------------------------------------------
def test_keeping_without_inputs_stays():
    state, directive = fsm_step(FsmState(), FsmInputs())
    assert state.mode is Mode.LANE_KEEPING and directive == "keep"


def test_obstacle_at_24m_triggers_lane_change():
    params = FsmParams(lane_change_trigger=25.0)
    state, directive = fsm_step(FsmState(), FsmInputs(True, 24.0, speed=2.5), params)
    assert state.mode is Mode.LANE_CHANGING and directive == "change_lane"
    assert state.length > 0.0


def test_stop_line_triggers_at_braking_distance():
    params = FsmParams()
    far, _ = fsm_step(FsmState(), FsmInputs(stop_line=30.0), params)
    assert far.mode is Mode.LANE_KEEPING
    near, directive = fsm_step(FsmState(), FsmInputs(stop_line=params.stop_trigger), params)
    assert near.mode is Mode.STOPPING and directive == "stop"


def test_stop_has_priority_over_obstacle():
    state, _ = fsm_step(FsmState(), FsmInputs(True, 5.0, stop_line=1.0))
    assert state.mode is Mode.STOPPING


def test_stopping_dwell_then_resume():
    params = FsmParams(dwell=1.0)
    state = FsmState(Mode.STOPPING)
    directives = []
    for _ in range(12):
        state, d = fsm_step(state, FsmInputs(speed=0.0, dt=0.1), params)
        directives.append(d)
    assert directives[:9] == ["hold"] * 9 and "resume" in directives
    assert state.mode is Mode.LANE_KEEPING


def test_lane_change_completes():
    state = FsmState(Mode.LANE_CHANGING, 0.0, 10.0)
    state, d = fsm_step(state, FsmInputs(travelled=4.0))
    assert d == "changing" and state.progress == 4.0
    state, d = fsm_step(state, FsmInputs(travelled=7.0))
    assert d == "change_done" and state.mode is Mode.LANE_KEEPING


def test_lane_change_progress_invariant():
    with pytest.raises(ValueError):
        FsmState(Mode.LANE_CHANGING, 12.0, 10.0)


inputs = st.builds(
    FsmInputs,
    st.booleans(),
    st.none() | st.floats(0, 60),
    st.none() | st.floats(0, 60),
    st.booleans(),
    st.floats(0, 3),
    st.floats(0, 0.2),
    st.floats(0, 0.2),
)


@settings(max_examples=100, deadline=None)
@given(st.lists(inputs, max_size=40))
def test_fsm_replay_is_deterministic_and_total(seq):
    def replay():
        state, trace = FsmState(), []
        for inp in seq:
            state, d = fsm_step(state, inp)
            assert state.mode in Mode
            trace.append((state, d))
        return trace

    assert replay() == replay()


def test_lane_change_length_respects_accel_limit():
    params = FsmParams(lat_accel_limit=0.5)
    length = lane_change_length(params, 2.5)
    sp = solve_lane_change(BoundaryConditions(0.0, length, yF=params.lane_change_offset))
    assert max_lateral_accel(sp, 2.5) <= 0.5 + 1e-9


# -- plan --------------------------------------------------------------------
def test_plan_keeping_straight_constant_speed():
    path = plan(FsmState(), QuadraticCenterline(), 3.0, VelocityProfile())
    assert all(w.position.y == 0.0 and w.speed == 2.5 for w in path)


def test_plan_lane_change_ends_in_adjacent_lane():
    path = plan(FsmState(Mode.LANE_CHANGING, 0.0, 15.0), QuadraticCenterline(), 3.0, VelocityProfile())
    assert path[-1].position.y == pytest.approx(3.0, abs=1e-6)


def test_plan_stopping_follows_sqrt_profile():
    prof = VelocityProfile("linear_decel", 2.5, 1.0, 3.125)
    path = plan(FsmState(Mode.STOPPING), QuadraticCenterline(), 3.0, prof, horizon=4.0)
    xs = np.array([w.position.x for w in path])
    speeds = np.array([w.speed for w in path])
    np.testing.assert_allclose(speeds, decel_profile(2.5, 3.125 - xs, 1.0), atol=1e-12)
    assert speeds[-1] == 0.0


def test_plan_lane_change_splice_is_smooth():
    c = QuadraticCenterline(0.01, 0.05, 0.2)
    keep = plan(FsmState(), c, 3.0, VelocityProfile())
    change = plan(FsmState(Mode.LANE_CHANGING, 0.0, 15.0), c, 3.0, VelocityProfile())
    # both start on the ego centerline at the vehicle
    assert change[0].position.x == pytest.approx(keep[0].position.x, abs=1e-6)
    assert change[0].position.y == pytest.approx(keep[0].position.y, abs=1e-6)
    xy = np.array([[w.position.x, w.position.y] for w in change])
    gaps = np.hypot(*np.diff(xy, axis=0).T)
    # offset path is a little longer than the centerline it is stepped along
    assert gaps.max() < 1.2 * 0.25
    h = np.unwrap([w.position.heading for w in change])
    assert np.max(np.abs(np.diff(h))) < 0.05


def test_splice_finite_difference_continuity():
    # lateral offset the planner applies: zero before the manoeuvre, the quintic after it
    sp = solve_lane_change(BoundaryConditions(0.0, 15.0, yF=3.0))

    def lateral(s: float) -> float:
        return 0.0 if s < 0.0 else float(sp(s))

    h = 1e-4
    assert abs(lateral(0.0) - lateral(-h)) <= 1e-6
    left = (lateral(0.0) - lateral(-h)) / h
    right = (lateral(h) - lateral(0.0)) / h
    assert abs(right - left) <= 1e-6
    assert abs((lateral(h) - 2 * lateral(0.0) + lateral(-h)) / h**2) <= 1e-6
