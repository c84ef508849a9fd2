"""Acceptance suite shared by the CLI and the test-suite.

Each criterion returns a :class:`CriterionResult` made of individual
checks. ``tighten`` (0 < tighten <= 1) scales every bound towards failure,
which is how the CLI demonstrates a forced violation.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .control import GAIN_PRESETS, BicycleParams, ControllerGains, closed_loop_matrix, fbl_steering
from .geometry import QuadraticCenterline, TrackingError, eval_centerline
from .perception import PerceptionConfig, fit_quadratic, raster_centerline
from .planning import BoundaryConditions, eval_local, solve_lane_change
from .sensors import BevConfig, SensorConfig, SourceConfig, synth_bev_raster
from .simulation import Scenario, Simulation, run_scenario
from .track import Obstacle, StopTarget, paper_track, straight_track
from .tracker import LaneKalmanState, LaneMeasurement, LaneTracker, NoiseModel


@dataclass(frozen=True)
class Check:
    label: str
    measured: float
    op: str  # "<=", ">=", "<" or "=="
    bound: float

    @property
    def passed(self) -> bool:
        m, b = self.measured, self.bound
        if isinstance(m, float) and math.isnan(m):
            return False
        return {"<=": m <= b, ">=": m >= b, "<": m < b, "==": m == b}[self.op]

    def describe(self) -> str:
        return f"{self.label}={self.measured:.6g} {self.op} {self.bound:.6g}"


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    checks: tuple[Check, ...]
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        body = "; ".join(c.describe() for c in self.checks)
        return f"[{status}] {self.number:2d} {self.name}: {body}"


def _scale(bound: float, op: str, tighten: float) -> float:
    if not 0.0 < tighten <= 1.0:
        raise ValueError("tighten must lie in (0, 1]")
    if op in ("<=", "<"):
        return bound * tighten
    if op == ">=":
        return bound / tighten
    return bound


def _checks(tighten: float, *items: tuple[str, float, str, float]) -> tuple[Check, ...]:
    return tuple(Check(label, float(value), op, _scale(bound, op, tighten)) for label, value, op, bound in items)


# -- scenarios used by the closed-loop criteria -------------------------------------
def lane_keeping_scenario(seed: int = 0, **overrides) -> Scenario:
    return Scenario(paper_track(), seed=seed, duration=90.0, **overrides)


def reference_scenario(seed: int = 0) -> Scenario:
    perfect = {
        name: SourceConfig((0.0, 0.0, 0.0), src.rate, 0.0) for name, src in SensorConfig().sources.items()
    }
    return Scenario(paper_track(), sensors=SensorConfig(sources=perfect), seed=seed, duration=90.0, reference="ground_truth")


def stop_scenario(seed: int = 0) -> Scenario:
    return Scenario(straight_track(80.0, stop_lines=(StopTarget(40.0),)), seed=seed, duration=60.0, v0=2.5)


def obstacle_scenario(seed: int = 0, mode: str = "fast") -> Scenario:
    track = straight_track(140.0, lanes=2, obstacles=(Obstacle(70.0, 0.0, 0.75, 0.75, 1.0),))
    return Scenario(track, seed=seed, duration=60.0, mode=mode)


# -- criteria -------------------------------------------------------------------
def criterion_lane_keeping(tighten: float = 1.0) -> CriterionResult:
    t0 = time.perf_counter()
    m, _ = run_scenario(lane_keeping_scenario())
    dt = time.perf_counter() - t0
    checks = _checks(
        tighten,
        ("rms_lateral", m.rms_lateral, "<=", 0.23),
        ("rms_straight", m.rms_straight, "<=", 0.20),
        ("max_turn", m.max_turn, "<=", 1.0),
        ("completed", float(m.completed), "==", 1.0),
        ("runtime_s", dt, "<", 30.0),
    )
    return CriterionResult(1, "lane-keeping RMS on the 200 m track", checks, dt)


def criterion_reference_tracking(tighten: float = 1.0) -> CriterionResult:
    t0 = time.perf_counter()
    m, _ = run_scenario(reference_scenario())
    checks = _checks(tighten, ("rms_lateral", m.rms_lateral, "<=", 0.10), ("completed", float(m.completed), "==", 1.0))
    return CriterionResult(2, "noise-free ground-truth waypoint tracking", checks, time.perf_counter() - t0)


def stop_errors(seeds=range(10)) -> list[float]:
    errors = []
    for seed in seeds:
        m, _ = run_scenario(stop_scenario(seed))
        errors.extend(m.stop_errors if m.stop_errors else [math.inf])
    return errors


def criterion_stopping(tighten: float = 1.0) -> CriterionResult:
    t0 = time.perf_counter()
    errs = np.abs(stop_errors())
    checks = _checks(
        tighten,
        ("stops", float(len(errs)), "==", 10.0),
        ("mean_abs_error", float(errs.mean()), "<=", 0.14),
        ("max_abs_error", float(errs.max()), "<=", 0.29),
    )
    return CriterionResult(3, "stop-line accuracy over 10 seeded runs", checks, time.perf_counter() - t0)


def criterion_obstacle(tighten: float = 1.0) -> CriterionResult:
    t0 = time.perf_counter()
    sc = obstacle_scenario()
    m, _ = run_scenario(sc)
    checks = _checks(
        tighten,
        ("detection_range", m.obstacle_first_range, ">=", 24.0),
        ("lane_change_completed", float(m.lane_change_completed), "==", 1.0),
        ("lane_change_lat_accel", m.lane_change_max_lateral_accel, "<=", sc.fsm.lat_accel_limit),
        ("post_change_rms", m.post_change_rms, "<", 0.23),
    )
    return CriterionResult(4, "pylon detection and lane change", checks, time.perf_counter() - t0)


def _bc_residuals(bc: BoundaryConditions) -> float:
    sp = solve_lane_change(bc)
    got = [
        eval_local(sp, bc.s0, 0) - bc.y0,
        eval_local(sp, bc.s0, 1) - bc.y_dot0,
        eval_local(sp, bc.s0, 2) - bc.y_ddot0,
        eval_local(sp, bc.sF, 0) - bc.yF,
        eval_local(sp, bc.sF, 1),
        eval_local(sp, bc.sF, 2),
    ]
    return float(np.max(np.abs(got)))


def criterion_quintic(tighten: float = 1.0, trials: int = 1000, seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    canon = solve_lane_change(BoundaryConditions(0.0, 1.0, 0.0, 0.0, 0.0, 1.0))
    canon_err = float(np.max(np.abs(np.asarray(canon.m) - [0, 0, 0, 10, -15, 6])))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        s0 = rng.uniform(-10.0, 10.0)
        span = rng.uniform(0.1, 100.0)
        y0, yd, ydd, yF = rng.uniform(-10.0, 10.0, 4)
        worst = max(worst, _bc_residuals(BoundaryConditions(s0, s0 + span, y0, yd, ydd, yF)))
    checks = _checks(tighten, ("canonical_error", canon_err, "<=", 1e-9), ("random_bc_residual", worst, "<=", 1e-9))
    return CriterionResult(5, "quintic boundary-condition solver", checks, time.perf_counter() - t0)


def linearization_residual(
    e_l: float, e_h: float, v: float, gains: ControllerGains, params: BicycleParams
) -> float:
    """Distance between one Euler step of the nonlinear error dynamics under the steering law and the linear closed loop."""
    delta = fbl_steering(TrackingError(e_l, e_h), v, gains, replace(params, max_steer=0.5 * math.pi - 1e-12))
    ts, L = params.t_s, params.wheelbase
    # p1 advances with v sin(e_H); p2 = v sin(e_H) advances with v cos(e_H) * (v / L) tan(delta)
    p = np.array([e_l, v * math.sin(e_h)])
    p_dot = np.array([v * math.sin(e_h), v * math.cos(e_h) * (v / L) * math.tan(delta)])
    A, _ = closed_loop_matrix(gains.gamma1, gains.gamma2, ts)
    return float(np.max(np.abs((p + ts * p_dot) - A @ p)))


def criterion_linearization(tighten: float = 1.0, trials: int = 1000, seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        gains = ControllerGains(rng.uniform(0.1, 5.0), rng.uniform(0.1, 5.0), 1.0)
        params = BicycleParams(wheelbase=rng.uniform(0.5, 4.0), t_s=rng.uniform(0.01, 0.1))
        e_l = rng.uniform(-0.5, 0.5)
        e_h = rng.uniform(-0.3, 0.3)
        v = rng.uniform(1.0, 10.0)
        worst = max(worst, linearization_residual(e_l, e_h, v, gains, params))
    checks = _checks(tighten, ("max_step_residual", worst, "<=", 1e-9))
    return CriterionResult(6, "feedback-linearization identity", checks, time.perf_counter() - t0)


def criterion_stability(tighten: float = 1.0) -> CriterionResult:
    t0 = time.perf_counter()
    worst = max(closed_loop_matrix(g.gamma1, g.gamma2, 1.0 / 26.0)[1] for g in GAIN_PRESETS.values())
    _, rho = closed_loop_matrix(1.0, 2.0, 0.05)
    checks = _checks(
        tighten,
        ("max_preset_rho", worst, "<", 1.0),
        ("analytic_rho_error", abs(rho - 0.95), "<=", 1e-12),
    )
    return CriterionResult(7, "closed-loop spectral radius", checks, time.perf_counter() - t0)


# -- fusion ------------------------------------------------------------------------
def _burst_mask(n: int, rng: np.random.Generator, burst_rate: float = 0.05, burst_len: int = 8) -> np.ndarray:
    """True where a lens-flare burst hides the frame (bursts of ``burst_len`` frames)."""
    hidden = np.zeros(n, dtype=bool)
    for start in np.nonzero(rng.random(n) < burst_rate)[0]:
        hidden[start : start + burst_len] = True
    return hidden


def fusion_experiment(frames: int = 1040, seed: int = 0, flare: bool = False, x_max: float = 10.0) -> dict[str, float]:
    """Centerline RMS over ``0..x_max`` of single-source and fused filters on a drifting synthetic lane.

    The truth follows the tracker's own random-walk model; the camera path
    runs every tick and the LiDAR path at 10 Hz. With ``flare`` the camera
    loses frames in bursts.
    """
    noise = NoiseModel()
    rng = np.random.default_rng(seed)
    tick = 1.0 / 26.0
    truth = np.zeros(3)
    x0 = np.array([0.0, 0.0, 0.0])
    filters = {
        key: LaneTracker(LaneKalmanState.initial(x0, t=0.0), noise, tick) for key in ("steerable", "lidar", "fused")
    }
    sd = {k: np.sqrt(np.diag(noise.omega[k])) for k in ("steerable", "lidar")}
    R_sd = np.sqrt(np.diag(noise.R))
    hidden = _burst_mask(frames, rng) if flare else np.zeros(frames, dtype=bool)
    xs = np.linspace(0.0, x_max, 21)
    sq = {k: 0.0 for k in filters}
    count = 0
    warmup = 52
    next_lidar = 0.0
    for k in range(frames):
        t = k * tick
        truth = truth + rng.standard_normal(3) * R_sd
        truth[0] = float(np.clip(truth[0], -0.1, 0.1))
        meas = []
        cam = truth + rng.standard_normal(3) * sd["steerable"]
        if not hidden[k]:
            meas.append(LaneMeasurement("steerable", cam, t))
        if t + 1e-9 >= next_lidar:
            next_lidar += 0.1
            meas.append(LaneMeasurement("lidar", truth + rng.standard_normal(3) * sd["lidar"], t))
        for key, f in filters.items():
            f.advance_to(t)
            for m in meas:
                if key == "fused" or key == m.source:
                    f.ingest(m)
        if k >= warmup:
            true_y = eval_centerline(QuadraticCenterline(*truth), xs)
            for key, f in filters.items():
                est = f.state.x
                y = est[0] * xs * xs + est[1] * xs + est[2]
                sq[key] += float(np.mean((y - true_y) ** 2))
            count += 1
    return {key: math.sqrt(v / count) for key, v in sq.items()}


def criterion_fusion(tighten: float = 1.0) -> CriterionResult:
    t0 = time.perf_counter()
    clean = fusion_experiment(flare=False)
    flared = fusion_experiment(flare=True, seed=1)
    best = min(clean["steerable"], clean["lidar"])
    checks = _checks(
        tighten,
        ("fused_over_best_single", clean["fused"] / best, "<=", 1.05),
        ("flare_fused_over_degraded", flared["fused"] / flared["steerable"], "<", 1.0),
    )
    return CriterionResult(8, "multi-source fusion benefit", checks, time.perf_counter() - t0)


# -- perception ------------------------------------------------------------------------
def raster_offset_error(lateral: float, heading: float = 0.0) -> tuple[float, float]:
    """(|c error|, raster resolution) for a noise-free raster with the vehicle displaced ``lateral`` meters."""
    track = straight_track(60.0)
    pose = track.pose_at(20.0, 0, lateral, heading)
    bev = BevConfig()
    raster = synth_bev_raster(pose, track, np.random.default_rng(0), bev, noise=0.0)
    fit = raster_centerline(raster, QuadraticCenterline(0.0, 0.0, 0.0), track.lane_width, PerceptionConfig(), 0)
    if fit is None:
        return math.inf, bev.resolution
    true_c = -lateral / math.cos(heading)
    return abs(fit.c - true_c), bev.resolution


def outlier_recovery_error(seed: int, outlier_fraction: float = 0.3) -> tuple[float, int]:
    truth = np.array([0.01, -0.05, 1.2])
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 19.0, 20)
    y = truth[0] * x * x + truth[1] * x + truth[2]
    n_out = int(round(outlier_fraction / (1.0 - outlier_fraction) * len(x)))
    ox = rng.uniform(0.0, 19.0, n_out)
    oy = rng.uniform(-5.0, 5.0, n_out)
    pts = np.vstack((np.column_stack((x, y)), np.column_stack((ox, oy))))
    fit, count = fit_quadratic(pts, 200, 0.05, seed)
    return float(np.max(np.abs(fit.as_vector() - truth))), count


def criterion_perception(tighten: float = 1.0, seeds: int = 20) -> CriterionResult:
    t0 = time.perf_counter()
    worst_ratio = 0.0
    for lateral in (-0.8, -0.33, 0.0, 0.27, 0.61):
        err, res = raster_offset_error(lateral)
        worst_ratio = max(worst_ratio, err / (0.5 * res))
    coef_err, min_inliers = 0.0, 10**9
    for seed in range(seeds):
        e, c = outlier_recovery_error(seed)
        coef_err = max(coef_err, e)
        min_inliers = min(min_inliers, c)
    checks = _checks(
        tighten,
        ("offset_error_over_half_cell", worst_ratio, "<=", 1.0),
        ("outlier_coef_error", coef_err, "<=", 0.01),
        ("min_inliers", float(min_inliers), ">=", 20.0),
    )
    return CriterionResult(9, "end-to-end lane perception", checks, time.perf_counter() - t0)


def steps_per_second(mode: str, duration: float) -> float:
    sc = Scenario(paper_track(), mode=mode, duration=duration)
    sim = Simulation(sc)
    t0 = time.perf_counter()
    _, log = sim.run()
    return len(log) / (time.perf_counter() - t0)


def criterion_throughput(tighten: float = 1.0) -> CriterionResult:
    t0 = time.perf_counter()
    fast = steps_per_second("fast", 20.0)
    full = steps_per_second("full", 8.0)
    checks = _checks(tighten, ("fast_steps_per_s", fast, ">=", 26.0), ("full_steps_per_s", full, ">=", 10.0))
    return CriterionResult(10, "simulation throughput", checks, time.perf_counter() - t0)


CRITERIA: dict[int, Callable[..., CriterionResult]] = {
    1: criterion_lane_keeping,
    2: criterion_reference_tracking,
    3: criterion_stopping,
    4: criterion_obstacle,
    5: criterion_quintic,
    6: criterion_linearization,
    7: criterion_stability,
    8: criterion_fusion,
    9: criterion_perception,
    10: criterion_throughput,
}


def run_all(tighten: float = 1.0, only=None) -> list[CriterionResult]:
    numbers = sorted(CRITERIA) if not only else sorted(set(only))
    return [CRITERIA[n](tighten) for n in numbers]
