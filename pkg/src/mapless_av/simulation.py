"""Deterministic closed-loop harness.

One fixed step of ``t_s`` runs: sense -> perceive (at each source's rate)
-> track -> behaviour/plan -> control -> kinematic bicycle plant.
"""

from __future__ import annotations

import collections
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import perception
from .control import BicycleParams, ControllerGains, PiController, control_step
from .geometry import Pose2D, Waypoint
from .obstacles import (
    GridGeometry,
    TraversabilityParams,
    build_elevation,
    detect_obstacles,
    fit_plane_distance,
    lane_corridor,
    traversability,
)
from .perception import DegenerateInputError, LaserScanSim, PerceptionConfig
from .planning import FsmInputs, FsmParams, FsmState, Mode, VelocityProfile, fsm_step, plan
from .sensors import (
    SensorConfig,
    scan_points,
    synth_bev_raster,
    synth_lane_measurement,
    synth_scan,
    synth_stop_points,
)
from .track import TrackDefinition
from .tracker import LaneKalmanState, LaneMeasurement, LaneTracker, NoiseModel

log = logging.getLogger(__name__)

STEP_COLUMNS = (
    "t", "x", "y", "heading", "v", "steer_cmd", "accel_cmd", "e_lateral", "e_heading",
    "fsm_state", "tracked_a", "tracked_b", "tracked_c",
)


@dataclass
class VehicleState:
    pose: Pose2D
    v: float = 0.0
    steer: float = 0.0

    def __post_init__(self) -> None:
        if self.v < 0.0:
            raise ValueError("vehicle speed must be >= 0")


def bicycle_step(state: VehicleState, steer_cmd: float, accel_cmd: float, params: BicycleParams) -> VehicleState:
    """Forward-Euler kinematic bicycle about the rear axle with a slew-limited steering actuator."""
    ts = params.t_s
    p = state.pose
    v = state.v
    x = p.x + ts * v * math.cos(p.heading)
    y = p.y + ts * v * math.sin(p.heading)
    heading = p.heading + ts * (v / params.wheelbase) * math.tan(state.steer)
    v_new = max(0.0, v + ts * accel_cmd)
    target = min(max(steer_cmd, -params.max_steer), params.max_steer)
    max_delta = params.steer_rate * ts
    steer = state.steer + min(max(target - state.steer, -max_delta), max_delta)
    return VehicleState(Pose2D(x, y, heading), v_new, steer)


@dataclass(frozen=True)
class ObstacleConfig:
    rate: float = 10.0
    window: int = 20
    threshold: float = 0.5
    min_cluster_size: int = 3
    grid: GridGeometry = GridGeometry()
    trav: TraversabilityParams = TraversabilityParams()


@dataclass(frozen=True)
class Scenario:
    track: TrackDefinition
    sensors: SensorConfig = field(default_factory=SensorConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    vehicle: BicycleParams = BicycleParams()
    gains: ControllerGains = ControllerGains()
    kp: float = 6.0
    ki: float = 0.5
    accel_limits: tuple[float, float] = (-3.0, 2.0)
    fsm: FsmParams = FsmParams()
    perception: PerceptionConfig = PerceptionConfig()
    obstacles: ObstacleConfig = ObstacleConfig()
    seed: int = 0
    duration: float = 120.0
    mode: str = "fast"
    reference: str = "tracked"
    laps: float = 1.0
    start_s: float = 0.0
    start_lateral: float = 0.0
    start_heading: float = 0.0
    v0: Optional[float] = None
    plan_spacing: float = 0.25
    plan_horizon: float = 15.0

    def __post_init__(self) -> None:
        if self.mode not in ("fast", "full"):
            raise ValueError(f"mode must be 'fast' or 'full', got {self.mode!r}")
        if self.reference not in ("tracked", "ground_truth"):
            raise ValueError(f"reference must be 'tracked' or 'ground_truth', got {self.reference!r}")
        if self.duration <= 0.0:
            raise ValueError("duration must be > 0")


@dataclass
class StepRecord:
    t: float
    x: float
    y: float
    heading: float
    v: float
    steer_cmd: float
    accel_cmd: float
    e_lateral: float
    e_heading: float
    fsm_state: str
    tracked_a: float
    tracked_b: float
    tracked_c: float
    # not part of the CSV log
    steer: float = 0.0
    v_ref: float = 0.0
    s: float = 0.0
    lane: int = 0
    travelled: float = 0.0

    def row(self) -> tuple:
        return tuple(getattr(self, name) for name in STEP_COLUMNS)


@dataclass
class StopEvent:
    target_s: float
    stopped_s: float
    t: float

    @property
    def error(self) -> float:
        return self.stopped_s - self.target_s


@dataclass
class RunMetrics:
    rms_lateral: float = math.nan
    max_lateral: float = math.nan
    rms_straight: float = math.nan
    rms_turn: float = math.nan
    max_straight: float = math.nan
    max_turn: float = math.nan
    stop_errors: list[float] = field(default_factory=list)
    max_lateral_accel: float = 0.0
    lane_change_max_lateral_accel: float = math.nan
    obstacle_first_range: float = math.nan
    lane_change_completed: bool = False
    post_change_rms: float = math.nan
    completed: bool = False
    failed: bool = False
    steps: int = 0

    def as_dict(self) -> dict[str, object]:
        out: dict[str, object] = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if name == "stop_errors":
                out["stop_count"] = len(value)
                out["stop_errors"] = ";".join(repr(float(v)) for v in value)
            else:
                out[name] = value
        return out


def lateral_errors(log: list[StepRecord], track: TrackDefinition) -> tuple[np.ndarray, np.ndarray]:
    """Signed offset of every logged rear-axle position from the nearest lane centerline, and the arc length."""
    xy = np.array([[r.x, r.y] for r in log], dtype=float).reshape(-1, 2)
    s, off = track.project(xy)
    lane = np.clip(np.round(off / track.lane_width), 0, track.lanes - 1)
    return off - lane * track.lane_width, s


def rms_lateral_error(log: list[StepRecord], track: TrackDefinition) -> dict[str, float]:
    if not log:
        raise ValueError("empty step log")
    err, s = lateral_errors(log, track)
    turn = track.is_turn(s)
    out = {
        "rms_lateral": float(np.sqrt(np.mean(err**2))),
        "max_lateral": float(np.max(np.abs(err))),
    }
    for label, sel in (("straight", ~turn), ("turn", turn)):
        if sel.any():
            out[f"rms_{label}"] = float(np.sqrt(np.mean(err[sel] ** 2)))
            out[f"max_{label}"] = float(np.max(np.abs(err[sel])))
        else:
            out[f"rms_{label}"] = math.nan
            out[f"max_{label}"] = math.nan
    return out


class _Rate:
    """Fires every ``1/rate`` seconds on the simulation clock, starting at t=0."""

    def __init__(self, rate: float) -> None:
        self.period = 1.0 / rate
        self.next = 0.0

    def due(self, t: float) -> bool:
        if t + 1e-9 >= self.next:
            while self.next <= t + 1e-9:
                self.next += self.period
            return True
        return False


class Simulation:
    """Stateful runner for one scenario; use :func:`run_scenario` for the common case."""

    def __init__(self, scenario: Scenario) -> None:
        self.sc = scenario
        self.track = scenario.track
        self.rng = np.random.default_rng(scenario.seed)
        self.params = scenario.vehicle
        ts = self.params.t_s
        tr = self.track
        pose = tr.pose_at(scenario.start_s, 0, scenario.start_lateral, scenario.start_heading)
        v0 = scenario.fsm.v_cruise if scenario.v0 is None else scenario.v0
        self.vehicle = VehicleState(pose, v0, 0.0)
        self.s = scenario.start_s
        self.travelled = 0.0
        self.lane = 0
        init = LaneKalmanState.initial((0.0, 0.0, -scenario.start_lateral), t=0.0)
        self.tracker = LaneTracker(init, scenario.noise, ts)
        self.pi = PiController(scenario.kp, scenario.ki, 0.0, *scenario.accel_limits)
        self.fsm = FsmState()
        self.rates = {name: _Rate(src.rate) for name, src in scenario.sensors.sources.items()}
        self.obstacle_rate = _Rate(scenario.obstacles.rate)
        self.edge_sets: collections.deque = collections.deque(maxlen=scenario.perception.scan_window)
        self.cloud_sets: collections.deque = collections.deque(maxlen=scenario.obstacles.window)
        self.obstacle_range: Optional[float] = None
        self.stop_estimate: Optional[float] = None
        self.stop_targets = sorted(tr.stop_lines, key=lambda st: st.s)
        self.stop_index = 0
        self.stop_events: list[StopEvent] = []
        self.lane_change_path: Optional[list[Waypoint]] = None
        self.lane_change_offset = 0.0
        self.lane_change_start: Optional[float] = None
        self.lane_change_done_at: Optional[float] = None
        self.first_obstacle_range = math.nan
        self.log: list[StepRecord] = []
        self.failed = False
        self.completed = False
        self._stopped_logged = False

    def _lane_estimate(self):
        return self.tracker.state.bounded(self.sc.sensors.a_max)

    # -- sensing & perception ----------------------------------------------------
    def _sense_lanes(self, t: float) -> tuple[list[LaneMeasurement], Optional[LaserScanSim]]:
        sc = self.sc
        pose = self.vehicle.pose
        meas = []
        scan = None
        for name, rate in self.rates.items():
            if not rate.due(t):
                continue
            src = sc.sensors.sources[name]
            if sc.mode == "fast":
                m = synth_lane_measurement(pose, self.track, name, self.rng, t, self.lane, sc.sensors, self.s)
            else:
                dropped = self.rng.random() < src.dropout
                m = None
                prior = self._lane_estimate()
                seed = int(self.rng.integers(2**31))
                if name == "lidar":
                    scan = synth_scan(pose, self.track, self.rng, sc.sensors.lidar, t)
                    edges = perception.lidar_intensity_edges(scan, sc.perception.lidar_gradient)
                    self.edge_sets.append((edges, pose))
                    merged = perception.accumulate_scans(list(self.edge_sets), sc.perception.scan_window)
                    fit = perception.lidar_centerline(merged, prior, self.track.lane_width, sc.perception, seed)
                else:
                    raster = synth_bev_raster(pose, self.track, self.rng, sc.sensors.bev)
                    fit = perception.raster_centerline(raster, prior, self.track.lane_width, sc.perception, seed)
                if fit is not None and not dropped:
                    m = LaneMeasurement(name, fit.as_vector(), t)
            if m is not None:
                meas.append(m)
        return meas, scan

    def _sense_obstacles(self, t: float, scan) -> None:
        sc = self.sc
        if not self.track.obstacles:
            return
        if not self.obstacle_rate.due(t):
            return
        pose = self.vehicle.pose
        if scan is None:
            scan = synth_scan(pose, self.track, self.rng, sc.sensors.lidar, t)
        cloud = downsample(scan_points(scan), sc.obstacles.grid)
        self.cloud_sets.append((cloud, pose))
        merged = []
        for pts, p in self.cloud_sets:
            if p == pose:
                merged.append(pts)
            else:
                xy = pose.to_local(p.to_world(pts[:, :2]))
                merged.append(np.column_stack((xy, pts[:, 2])))
        grid = build_elevation(np.vstack(merged), sc.obstacles.grid)
        trav = traversability(grid, sc.obstacles.trav)
        corridor = lane_corridor(
            self._lane_estimate(), self.track.lane_width, sc.obstacles.grid.x_min + sc.obstacles.grid.length
        )
        clusters = detect_obstacles(trav, corridor, sc.obstacles.threshold, sc.obstacles.min_cluster_size)
        if clusters:
            self.obstacle_range = clusters[0].range
            if math.isnan(self.first_obstacle_range) and self.fsm.mode is Mode.LANE_KEEPING:
                self.first_obstacle_range = clusters[0].range
        else:
            self.obstacle_range = None

    def _sense_stop(self, dist_step: float) -> None:
        if self.stop_estimate is not None:
            self.stop_estimate -= dist_step
        while self.stop_index < len(self.stop_targets) and self.stop_targets[self.stop_index].s < self.s - 1.0:
            self.stop_index += 1
            self.stop_estimate = None
        if self.stop_index >= len(self.stop_targets):
            return
        target = self.stop_targets[self.stop_index]
        pts = synth_stop_points(self.vehicle.pose, self.track, target, self.rng, self.sc.sensors.stop)
        if pts is None:
            return
        try:
            _, dist = fit_plane_distance(pts)
        except DegenerateInputError:
            return
        self.stop_estimate = dist

    # -- planning ------------------------------------------------------------------
    def _ground_truth_path(self, profile: VelocityProfile) -> list[Waypoint]:
        sc = self.sc
        s = self.s + np.arange(-1.0, sc.plan_horizon + 1e-9, sc.plan_spacing)
        if not self.track.closed:
            s = s[(s >= 0.0) & (s <= self.track.length)]
        pts = self.track.lane_points(s, self.lane)
        h = self.track.heading_at(s)
        speeds = profile.speed_at(s - self.s)
        return [Waypoint(Pose2D(float(p[0]), float(p[1]), float(hh)), 0.0, float(v)) for p, hh, v in zip(pts, h, speeds)]

    def _profile(self) -> VelocityProfile:
        f = self.sc.fsm
        if self.fsm.mode is Mode.STOPPING and self.stop_estimate is not None:
            return VelocityProfile("linear_decel", f.v_cruise, f.a_decel, self.stop_estimate)
        return VelocityProfile("constant", f.v_cruise, f.a_decel)

    def _start_lane_change(self) -> None:
        tr = self.track
        if self.lane + 1 < tr.lanes:
            offset = tr.lane_width
        elif self.lane > 0:
            offset = -tr.lane_width
        else:
            log.warning("lane change requested on a single-lane track; holding lane")
            self.fsm = FsmState()
            return
        self.lane_change_offset = offset
        profile = VelocityProfile("constant", self.sc.fsm.v_cruise)
        local = plan(self.fsm, self._lane_estimate(), offset, profile, self.sc.plan_spacing)
        pose = self.vehicle.pose
        self.lane_change_path = [
            Waypoint(pose.compose(w.position), w.curvature, w.speed) for w in local
        ]
        self.lane_change_start = self.travelled

    def _finish_lane_change(self) -> None:
        self.lane += 1 if self.lane_change_offset > 0 else -1
        self.tracker.shift_lateral(self.lane_change_offset)
        self.lane_change_path = None
        self.lane_change_done_at = self.travelled
        self.obstacle_range = None
        self.cloud_sets.clear()
        self.edge_sets.clear()

    # -- main loop ------------------------------------------------------------------
    def step(self, k: int) -> None:
        sc = self.sc
        ts = self.params.t_s
        t = k * ts
        prev_pose = self.vehicle.pose
        meas, scan = self._sense_lanes(t)
        self.tracker.advance_to(t)
        for m in meas:
            self.tracker.ingest(m)
        self._sense_obstacles(t, scan)

        step_dist = self.log[-1].v * ts if self.log else 0.0
        self._sense_stop(step_dist)

        inputs = FsmInputs(
            obstacle_in_lane=self.obstacle_range is not None,
            obstacle_range=self.obstacle_range,
            stop_line=None if self.stop_estimate is None else max(self.stop_estimate, 0.0),
            speed=self.vehicle.v,
            dt=ts,
            travelled=step_dist,
        )
        self.fsm, directive = fsm_step(self.fsm, inputs, sc.fsm)
        if directive == "change_lane":
            self._start_lane_change()
        elif directive == "change_done":
            self._finish_lane_change()
        elif directive == "hold" and not self._stopped_logged:
            self._record_stop(t)
        elif directive == "resume":
            self.stop_index += 1
            self.stop_estimate = None
            self._stopped_logged = False
            self.pi.reset()

        profile = self._profile()
        if self.fsm.mode is Mode.LANE_CHANGING and self.lane_change_path is not None:
            path, pose = self.lane_change_path, self.vehicle.pose
        elif sc.reference == "ground_truth":
            path, pose = self._ground_truth_path(profile), self.vehicle.pose
        else:
            path = plan(self.fsm, self._lane_estimate(), 0.0, profile, sc.plan_spacing, sc.plan_horizon)
            pose = Pose2D()
        out = control_step(pose, path, self.vehicle.v, sc.gains, self.params, self.pi)
        est = self.tracker.state.x
        p = self.vehicle.pose
        self.log.append(
            StepRecord(
                t, p.x, p.y, p.heading, self.vehicle.v, out.steer, out.accel,
                out.error.e_lateral, out.error.e_heading, self.fsm.label,
                float(est[0]), float(est[1]), float(est[2]),
                steer=self.vehicle.steer, v_ref=out.v_ref, s=self.s, lane=self.lane, travelled=self.travelled,
            )
        )
        self.vehicle = bicycle_step(self.vehicle, out.steer, out.accel, self.params)
        moved = math.hypot(self.vehicle.pose.x - prev_pose.x, self.vehicle.pose.y - prev_pose.y)
        self.travelled += moved
        self.s, off = self.track.project_near((self.vehicle.pose.x, self.vehicle.pose.y), self.s)
        w = self.track.lane_width
        centers = [self.lane * w]
        if self.fsm.mode is Mode.LANE_CHANGING:
            centers.append(self.lane * w + self.lane_change_offset)
        if min(abs(off - c) for c in centers) > w:
            self.failed = True

    def _record_stop(self, t: float) -> None:
        if self.stop_index < len(self.stop_targets):
            target = self.stop_targets[self.stop_index]
            self.stop_events.append(StopEvent(target.s, self.s, t))
        self._stopped_logged = True

    def finished(self) -> bool:
        tr = self.track
        goal = tr.length * self.sc.laps if tr.closed else tr.length - 0.5
        progress = self.travelled if tr.closed else self.s
        return progress >= goal

    def run(self) -> tuple[RunMetrics, list[StepRecord]]:
        ts = self.params.t_s
        n_steps = int(math.ceil(self.sc.duration / ts))
        for k in range(n_steps):
            self.step(k)
            if self.failed:
                break
            if self.finished():
                self.completed = True
                break
        return self.metrics(), self.log

    def metrics(self) -> RunMetrics:
        m = RunMetrics()
        if self.log:
            for key, value in rms_lateral_error(self.log, self.track).items():
                setattr(m, key, value)
            v = np.array([r.v for r in self.log])
            steer = np.array([r.steer for r in self.log])
            lat = v * v * np.abs(np.tan(steer)) / self.params.wheelbase
            m.max_lateral_accel = float(lat.max())
            changing = np.array([r.fsm_state == Mode.LANE_CHANGING.value for r in self.log])
            if changing.any():
                m.lane_change_max_lateral_accel = float(lat[changing].max())
            if self.lane_change_done_at is not None:
                m.lane_change_completed = True
                err, _ = lateral_errors(self.log, self.track)
                trav = np.array([r.travelled for r in self.log])
                after = trav >= self.lane_change_done_at + 20.0
                if after.any():
                    m.post_change_rms = float(np.sqrt(np.mean(err[after] ** 2)))
        m.stop_errors = [ev.error for ev in self.stop_events]
        m.obstacle_first_range = self.first_obstacle_range
        m.completed = self.completed and not self.failed
        m.failed = self.failed
        m.steps = len(self.log)
        return m


def downsample(points: np.ndarray, grid: GridGeometry) -> np.ndarray:
    """Keep the highest return per grid cell (cells outside the grid are dropped)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    res = grid.resolution
    r = np.floor((pts[:, 0] - grid.x_min) / res).astype(np.int64)
    c = np.floor((pts[:, 1] + 0.5 * grid.width) / res).astype(np.int64)
    rows, cols = grid.shape
    # keep a margin behind the grid so accumulated clouds still cover it after the vehicle moves
    keep = (r >= -40) & (r < rows) & (c >= 0) & (c < cols)
    pts, r, c = pts[keep], r[keep], c[keep]
    key = (r + 40) * cols + c
    order = np.lexsort((-pts[:, 2], key))
    key_sorted = key[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = key_sorted[1:] != key_sorted[:-1]
    sel = order[first]
    out = pts[sel].copy()
    out[:, 0] = grid.x_min + (r[sel] + 0.5) * res
    out[:, 1] = -0.5 * grid.width + (c[sel] + 0.5) * res
    return out


def run_scenario(scenario: Scenario) -> tuple[RunMetrics, list[StepRecord]]:
    return Simulation(scenario).run()
