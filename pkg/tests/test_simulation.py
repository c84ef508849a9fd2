from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from mapless_av.control import BicycleParams, ControllerGains
from mapless_av.geometry import Pose2D
from mapless_av.scenario import load_scenario, shipped_scenarios
from mapless_av.sensors import SensorConfig, SourceConfig
from mapless_av.simulation import (
    Scenario,
    StepRecord,
    VehicleState,
    bicycle_step,
    rms_lateral_error,
    run_scenario,
)
from mapless_av.track import StopTarget, paper_track, straight_track

STRAIGHT = straight_track(60.0)


def perfect() -> SensorConfig:
    return SensorConfig(sources={
        "steerable": SourceConfig((0.0, 0.0, 0.0), 26.0, 0.0),
        "lidar": SourceConfig((0.0, 0.0, 0.0), 10.0, 0.0),
    })


def record(x: float, y: float) -> StepRecord:
    return StepRecord(0.0, x, y, 0.0, 2.5, 0.0, 0.0, 0.0, 0.0, "lane_keeping", 0.0, 0.0, 0.0)


# -- metrics -----------------------------------------------------------------
def test_rms_on_centerline_is_zero():
    m = rms_lateral_error([record(x, 0.0) for x in range(5, 50)], STRAIGHT)
    assert m["rms_lateral"] == pytest.approx(0.0, abs=1e-12)


def test_rms_constant_offset():
    m = rms_lateral_error([record(x, 0.1) for x in range(5, 50)], STRAIGHT)
    assert m["rms_lateral"] == pytest.approx(0.1, abs=1e-12)
    assert m["max_lateral"] == pytest.approx(0.1, abs=1e-12)


def test_rms_mixed_offsets():
    log = [record(10 + i, 0.1 if i % 2 else -0.3) for i in range(40)]
    m = rms_lateral_error(log, STRAIGHT)
    assert m["rms_lateral"] == pytest.approx(math.sqrt((0.01 + 0.09) / 2), abs=1e-12)
    assert m["rms_lateral"] == pytest.approx(0.2236, abs=5e-5)
    assert m["rms_lateral"] <= m["max_lateral"]


def test_rms_needs_a_log():
    with pytest.raises(ValueError):
        rms_lateral_error([], STRAIGHT)


# -- plant -------------------------------------------------------------------
def test_speed_constant_without_acceleration():
    state = VehicleState(Pose2D(), 2.5, 0.1)
    for _ in range(500):
        state = bicycle_step(state, 0.1, 0.0, BicycleParams())
    assert state.v == 2.5


# -- closed loop -------------------------------------------------------------
def test_perfect_sensing_straight_is_exact():
    m, log = run_scenario(Scenario(STRAIGHT, sensors=perfect(), duration=30.0))
    assert m.completed and not m.failed
    assert m.rms_lateral < 0.01
    assert m.rms_lateral <= m.max_lateral


def test_run_is_bit_deterministic():
    sc = Scenario(STRAIGHT, duration=10.0, seed=3)
    a = [r.row() for r in run_scenario(sc)[1]]
    b = [r.row() for r in run_scenario(sc)[1]]
    assert a == b


def test_seed_changes_the_run():
    a = [r.row() for r in run_scenario(Scenario(STRAIGHT, duration=5.0, seed=1))[1]]
    b = [r.row() for r in run_scenario(Scenario(STRAIGHT, duration=5.0, seed=2))[1]]
    assert a != b


def test_dropout_does_not_destabilize():
    sources = {k: replace(v, dropout=0.3) for k, v in SensorConfig().sources.items()}
    m, _ = run_scenario(Scenario(STRAIGHT, sensors=SensorConfig(sources=sources), duration=30.0, seed=4))
    assert not m.failed and m.rms_lateral < 0.1


def test_stop_event_logged():
    track = straight_track(80.0, stop_lines=(StopTarget(40.0),))
    m, log = run_scenario(Scenario(track, duration=60.0))
    assert len(m.stop_errors) == 1
    assert abs(m.stop_errors[0]) < 0.29
    assert "stopping" in {r.fsm_state for r in log}


def test_departure_marks_failure_and_keeps_metrics():
    sc = Scenario(STRAIGHT, gains=ControllerGains(50.0, 0.01), start_lateral=1.0, duration=30.0)
    m, log = run_scenario(sc)
    assert m.failed and not m.completed
    assert m.steps == len(log) > 0 and math.isfinite(m.rms_lateral)


def test_paper_track_lap_in_fast_mode():
    m, _ = run_scenario(Scenario(paper_track(), duration=90.0))
    assert m.completed
    assert m.rms_straight < 0.20 and m.max_turn < 0.29


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(STRAIGHT, mode="slow")
    with pytest.raises(ValueError):
        Scenario(STRAIGHT, reference="map")
    with pytest.raises(ValueError):
        Scenario(STRAIGHT, duration=0.0)


_RUNS: dict = {}


def shipped_run(name: str):
    if name not in _RUNS:
        sc = load_scenario(name)
        _RUNS[name] = (sc, *run_scenario(sc))
    return _RUNS[name]


@pytest.mark.parametrize("name", shipped_scenarios())
def test_shipped_lane_change_respects_accel_limit(name):
    sc, m, _ = shipped_run(name)
    assert not m.failed
    if not math.isnan(m.lane_change_max_lateral_accel):
        assert m.lane_change_max_lateral_accel <= 1.05 * sc.fsm.lat_accel_limit


def test_obstacle_run_changes_lane():
    _, m, log = shipped_run("obstacle")
    assert m.lane_change_completed
    assert m.obstacle_first_range >= 20.0
    assert log[-1].lane == 1
    assert np.isfinite(m.post_change_rms) and m.post_change_rms < 0.2
