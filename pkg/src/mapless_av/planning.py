"""Behaviour state machine, velocity profiles and quintic lane-change paths."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .geometry import Pose2D, QuadraticCenterline, Waypoint, eval_centerline


class Mode(enum.Enum):
    LANE_KEEPING = "lane_keeping"
    STOPPING = "stopping"
    LANE_CHANGING = "lane_changing"


@dataclass(frozen=True)
class FsmState:
    mode: Mode = Mode.LANE_KEEPING
    progress: float = 0.0
    length: float = 0.0
    dwell: float = 0.0

    def __post_init__(self) -> None:
        if self.mode is Mode.LANE_CHANGING and not -1e-12 <= self.progress <= self.length + 1e-12:
            raise ValueError(f"lane-change progress {self.progress} outside [0, {self.length}]")

    @property
    def label(self) -> str:
        return self.mode.value


@dataclass(frozen=True)
class BoundaryConditions:
    s0: float
    sF: float
    y0: float = 0.0
    y_dot0: float = 0.0
    y_ddot0: float = 0.0
    yF: float = 0.0

    def __post_init__(self) -> None:
        if not self.sF > self.s0:
            raise ValueError(f"sF ({self.sF}) must exceed s0 ({self.s0})")


class IllConditionedError(ValueError):
    pass


@dataclass(frozen=True)
class QuinticSpline:
    """``f(s) = sum(m[i] * s**i)`` on ``[s0, sF]``.

    ``local`` holds the same polynomial in ``u = s - s0``; evaluation goes
    through it, which avoids cancellation when ``|s0|`` is large.
    """

    m: np.ndarray
    s0: float
    sF: float
    local: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float))
        local = _recenter(self.m, self.s0) if self.local is None else np.asarray(self.local, dtype=float)
        object.__setattr__(self, "local", local)

    def derivative_coeffs(self, order: int) -> np.ndarray:
        return _derivative(self.m, order)

    def __call__(self, s, order: int = 0):
        u = np.asarray(s, dtype=float) - self.s0
        return np.polynomial.polynomial.polyval(u, _derivative(self.local, order))


def _derivative(coeffs: np.ndarray, order: int) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    for _ in range(order):
        c = c[1:] * np.arange(1, len(c)) if len(c) > 1 else np.zeros(1)
    return c


def _recenter(m: np.ndarray, s0: float) -> np.ndarray:
    """Coefficients in ``u = s - s0`` of ``sum m[j] s**j``."""
    k = np.zeros(len(m))
    for i in range(len(m)):
        for j in range(i, len(m)):
            k[i] += m[j] * math.comb(j, i) * s0 ** (j - i)
    return k


def solve_lane_change(bc: BoundaryConditions) -> QuinticSpline:
    """Quintic meeting position/slope/concavity at both ends (zero slope and concavity at ``sF``).

    The six boundary conditions pin all six coefficients, so minimizing the
    integrated squared concavity over quintics reduces to this linear solve.
    It is done in ``u = s - s0`` and then re-expanded in ``s``.
    """
    span = bc.sF - bc.s0
    if span < 1e-6:
        raise IllConditionedError(f"lane-change span {span} too short")
    D = span
    A = np.array(
        [
            [1, 0, 0, 0, 0, 0],
            [0, 1, 0, 0, 0, 0],
            [0, 0, 2, 0, 0, 0],
            [1, D, D**2, D**3, D**4, D**5],
            [0, 1, 2 * D, 3 * D**2, 4 * D**3, 5 * D**4],
            [0, 0, 2, 6 * D, 12 * D**2, 20 * D**3],
        ],
        dtype=float,
    )
    rhs = np.array([bc.y0, bc.y_dot0, bc.y_ddot0, bc.yF, 0.0, 0.0])
    # column scaling keeps the system well conditioned for long spans
    scale = D ** np.arange(6)
    k = np.linalg.solve(A / scale, rhs) / scale
    m = _shift_polynomial(k, bc.s0)
    return QuinticSpline(m, bc.s0, bc.sF, k)


def _shift_polynomial(k: np.ndarray, s0: float) -> np.ndarray:
    """Coefficients in ``s`` of ``sum k[i] (s - s0)**i``."""
    if s0 == 0.0:
        return np.array(k, dtype=float)
    m = np.zeros(len(k))
    for i, ki in enumerate(k):
        for j in range(i + 1):
            m[j] += ki * math.comb(i, j) * (-s0) ** (i - j)
    return m


def eval_local(spline: QuinticSpline, s, order: int = 0):
    """Evaluate ``spline`` (or its ``order``-th derivative) at ``s`` via the shifted coefficients."""
    return spline(s, order)


def max_lateral_accel(spline: QuinticSpline, v: float, step: float = 0.01) -> float:
    """Largest ``v**2 * |f''|`` over a dense sampling of the spline's domain."""
    if v < 0.0:
        raise ValueError("speed must be >= 0")
    n = max(int(math.ceil((spline.sF - spline.s0) / step)), 1) + 1
    s = np.linspace(spline.s0, spline.sF, n)
    return float(v * v * np.max(np.abs(eval_local(spline, s, 2))))


@dataclass(frozen=True)
class VelocityProfile:
    mode: str = "constant"
    v_cruise: float = 2.5
    a_decel: float = 1.0
    stop_point: float = math.inf

    def __post_init__(self) -> None:
        if self.mode not in ("constant", "linear_decel"):
            raise ValueError(f"unknown velocity profile mode {self.mode!r}")
        if self.v_cruise < 0.0:
            raise ValueError("v_cruise must be >= 0")
        if self.a_decel <= 0.0:
            raise ValueError("a_decel must be > 0")

    def speed_at(self, s):
        s = np.asarray(s, dtype=float)
        if self.mode == "constant":
            return np.full(s.shape, self.v_cruise)
        return decel_profile(self.v_cruise, self.stop_point - s, self.a_decel)


def braking_distance(v0: float, a_max: float) -> float:
    return v0 * v0 / (2.0 * a_max)


def decel_profile(v0: float, d_remaining, a_max: float):
    """Commanded speed with ``d_remaining`` meters to the stop point.

    Holds ``v0`` until the braking distance is reached, then follows
    ``sqrt(2 a d)``. Negative distances mean stop now.
    """
    if v0 < 0.0 or a_max <= 0.0:
        raise ValueError("need v0 >= 0 and a_max > 0")
    d = np.maximum(np.asarray(d_remaining, dtype=float), 0.0)
    v = np.where(d >= braking_distance(v0, a_max), v0, np.sqrt(np.maximum(0.0, 2.0 * a_max * d)))
    return float(v) if v.ndim == 0 else v


@dataclass(frozen=True)
class FsmParams:
    v_cruise: float = 2.5
    a_decel: float = 1.0
    stop_margin: float = 0.5
    dwell: float = 3.0
    lane_change_trigger: float = 20.0
    lane_change_length: float = 15.0
    lane_change_ref_speed: float = 2.5
    lat_accel_limit: float = 2.0
    lane_change_offset: float = 3.0
    stopped_speed: float = 0.05

    @property
    def stop_trigger(self) -> float:
        return braking_distance(self.v_cruise, self.a_decel) + self.stop_margin


@dataclass(frozen=True)
class FsmInputs:
    obstacle_in_lane: bool = False
    obstacle_range: Optional[float] = None
    stop_line: Optional[float] = None
    lane_change_done: bool = False
    speed: float = 0.0
    dt: float = 0.0
    travelled: float = 0.0

    def __post_init__(self) -> None:
        for name in ("obstacle_range", "stop_line"):
            value = getattr(self, name)
            if value is not None and value < 0.0:
                raise ValueError(f"{name} must be >= 0")


def fsm_step(state: FsmState, inputs: FsmInputs, params: FsmParams = FsmParams()) -> tuple[FsmState, str]:
    """One transition of the behaviour machine; returns the new state and a directive.

    Directives: ``keep``, ``stop``, ``hold``, ``resume``, ``change_lane``,
    ``changing``, ``change_done``. A stop line takes priority over an
    obstacle when both trigger on the same step.
    """
    mode = state.mode
    if mode is Mode.LANE_KEEPING:
        if inputs.stop_line is not None and inputs.stop_line <= params.stop_trigger:
            return FsmState(Mode.STOPPING), "stop"
        obstacle_close = (
            inputs.obstacle_in_lane
            and inputs.obstacle_range is not None
            and inputs.obstacle_range <= params.lane_change_trigger
        )
        if obstacle_close:
            return FsmState(Mode.LANE_CHANGING, 0.0, lane_change_length(params, inputs.speed)), "change_lane"
        return state, "keep"

    if mode is Mode.STOPPING:
        if inputs.speed <= params.stopped_speed:
            dwell = state.dwell + inputs.dt
            if dwell >= params.dwell:
                return FsmState(Mode.LANE_KEEPING), "resume"
            return replace(state, dwell=dwell), "hold"
        return replace(state, dwell=0.0), "stop"

    progress = min(state.progress + max(inputs.travelled, 0.0), state.length)
    if inputs.lane_change_done or progress >= state.length:
        return FsmState(Mode.LANE_KEEPING), "change_done"
    return replace(state, progress=progress), "changing"


def lane_change_length(params: FsmParams, speed: float) -> float:
    """Maneuver length: nominal length scaled with speed, stretched to respect the lateral-acceleration limit."""
    v = speed if speed > 0.0 else params.v_cruise
    length = params.lane_change_length * v / params.lane_change_ref_speed
    length = max(length, 1.0)
    for _ in range(200):
        spline = solve_lane_change(BoundaryConditions(0.0, length, yF=params.lane_change_offset))
        if max_lateral_accel(spline, v, step=min(0.01, length / 100)) <= params.lat_accel_limit:
            break
        length *= 1.05
    return length


def _centerline_arclength(c: QuadraticCenterline, x: np.ndarray) -> np.ndarray:
    y = eval_centerline(c, x)
    seg = np.hypot(np.diff(x), np.diff(y))
    return np.concatenate(([0.0], np.cumsum(seg)))


def plan(
    state: FsmState,
    tracked: QuadraticCenterline,
    adjacent_offset: float,
    profile: VelocityProfile,
    spacing: float = 0.25,
    horizon: float = 15.0,
    tail: float = 20.0,
) -> list[Waypoint]:
    """Waypoints in the vehicle frame.

    Lane keeping and stopping follow the tracked centerline with speeds from
    ``profile`` (indexed by arc length from the vehicle). Lane changing
    offsets the centerline by a quintic in arc length from 0 to
    ``adjacent_offset`` over the maneuver length, then continues ``tail``
    meters along the adjacent centerline.
    """
    if state.mode is not Mode.LANE_CHANGING:
        xs = np.arange(0.0, horizon + 1e-9, spacing)
        s = _centerline_arclength(tracked, xs)
        ys = eval_centerline(tracked, xs)
        slope = tracked.slope(xs)
        heading = np.arctan(slope)
        kappa = tracked.curvature(xs)
        speeds = profile.speed_at(s)
        return [
            Waypoint(Pose2D(float(x), float(y), float(h)), float(k), float(v))
            for x, y, h, k, v in zip(xs, ys, heading, kappa, speeds)
        ]

    length = state.length
    spline = solve_lane_change(BoundaryConditions(0.0, length, yF=adjacent_offset))
    total = length + tail
    # sample the centerline densely, then walk it by arc length
    xs_dense = np.arange(0.0, total * 1.5 + spacing, spacing / 10.0)
    s_dense = _centerline_arclength(tracked, xs_dense)
    s = np.arange(0.0, total + 1e-9, spacing)
    xs = np.interp(s, s_dense, xs_dense)
    base_y = eval_centerline(tracked, xs)
    h = np.arctan(tracked.slope(xs))
    lateral = np.where(s <= length, spline(np.minimum(s, length)), adjacent_offset)
    px = xs - np.sin(h) * lateral
    py = base_y + np.cos(h) * lateral
    dx = np.gradient(px)
    dy = np.gradient(py)
    heading = np.arctan2(dy, dx)
    ddx = np.gradient(dx)
    ddy = np.gradient(dy)
    kappa = (dx * ddy - dy * ddx) / np.maximum((dx * dx + dy * dy) ** 1.5, 1e-12)
    speeds = profile.speed_at(s)
    return [
        Waypoint(Pose2D(float(x), float(y), float(hh)), float(k), float(v))
        for x, y, hh, k, v in zip(px, py, heading, kappa, speeds)
    ]
