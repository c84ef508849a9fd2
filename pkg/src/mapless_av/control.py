"""Decoupled path tracking: feedback-linearized steering plus PI speed control."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Pose2D, TrackingError, Waypoint, closest_index, errors_to_point, path_arrays, tracking_point

V_MIN = 0.5


@dataclass(frozen=True)
class ControllerGains:
    gamma1: float = 2.0
    gamma2: float = 3.0
    lookahead: float = 1.0

    def __post_init__(self) -> None:
        if not (self.gamma1 > 0.0 and self.gamma2 > 0.0):
            raise ValueError(f"gains must be positive (gamma1={self.gamma1}, gamma2={self.gamma2})")
        if self.lookahead < 0.0:
            raise ValueError("lookahead must be >= 0")


# Shipped presets; every one must give a stable closed loop at the 26 Hz tick.
GAIN_PRESETS: dict[str, ControllerGains] = {
    "default": ControllerGains(2.0, 3.0, 1.0),
    "smooth": ControllerGains(1.0, 2.0, 2.0),
    "tight_turns": ControllerGains(2.0, 3.0, 1.5),
}


@dataclass(frozen=True)
class BicycleParams:
    wheelbase: float = 1.5
    t_s: float = 1.0 / 26.0
    max_steer: float = 0.55
    steer_rate: float = 0.6

    def __post_init__(self) -> None:
        if self.wheelbase <= 0.0:
            raise ValueError("wheelbase must be > 0")
        if self.t_s <= 0.0:
            raise ValueError("timestep must be > 0")
        if not 0.0 < self.max_steer < 0.5 * math.pi:
            raise ValueError("max_steer must lie in (0, pi/2)")
        if self.steer_rate <= 0.0:
            raise ValueError("steer_rate must be > 0")


@dataclass(frozen=True)
class LinearizedState:
    p1: float
    p2: float

    @classmethod
    def from_errors(cls, err: TrackingError, v: float) -> "LinearizedState":
        return cls(err.e_lateral, v * math.sin(err.e_heading))

    def as_vector(self) -> np.ndarray:
        return np.array([self.p1, self.p2])


def fbl_steering(err: TrackingError, v: float, gains: ControllerGains, params: BicycleParams) -> float:
    """Steering angle that renders the lateral error dynamics linear.

    With ``eta = -gamma1 * e_L - gamma2 * v * sin(e_H)`` the new input is
    ``eta = v**2 / L * cos(e_H) * tan(delta)``; solving for ``delta`` keeps the
    wheelbase in the law. Speeds below ``V_MIN`` are clamped inside the law.
    """
    v = max(v, V_MIN)
    if abs(err.e_heading) >= 0.5 * math.pi:
        return -math.copysign(params.max_steer, err.e_lateral) if err.e_lateral else params.max_steer
    eta = -gains.gamma1 * err.e_lateral - gains.gamma2 * v * math.sin(err.e_heading)
    delta = math.atan(params.wheelbase * eta / (v * v * math.cos(err.e_heading)))
    return float(np.clip(delta, -params.max_steer, params.max_steer))


def closed_loop_matrix(gamma1: float, gamma2: float, t_s: float) -> tuple[np.ndarray, float]:
    """Discrete closed-loop map on the linearized state and its spectral radius."""
    if t_s <= 0.0:
        raise ValueError("t_s must be > 0")
    A = np.array([[1.0, t_s], [-t_s * gamma1, 1.0 - t_s * gamma2]])
    # closed form avoids the O(sqrt(eps)) split of a repeated root
    tr = A[0, 0] + A[1, 1]
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    disc = tr * tr / 4.0 - det
    if disc >= 0.0:
        r = math.sqrt(disc)
        rho = max(abs(tr / 2.0 + r), abs(tr / 2.0 - r))
    else:
        rho = math.sqrt(det)
    return A, rho


@dataclass
class PiController:
    kp: float = 6.0
    ki: float = 0.5
    integral: float = 0.0
    out_min: float = -3.0
    out_max: float = 2.0

    def reset(self) -> None:
        self.integral = 0.0


def pi_longitudinal(v_ref: float, v: float, ctrl: PiController, dt: float) -> float:
    """Acceleration command; the integral is clamped so ``ki * integral`` stays within the output limits."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    e = v_ref - v
    ctrl.integral += e * dt
    if ctrl.ki > 0.0:
        ctrl.integral = min(max(ctrl.integral, ctrl.out_min / ctrl.ki), ctrl.out_max / ctrl.ki)
    out = ctrl.kp * e + ctrl.ki * ctrl.integral
    return min(max(out, ctrl.out_min), ctrl.out_max)


def reference_speed(path: Sequence[Waypoint], pose: Pose2D) -> float:
    """Planned speed at the waypoint closest to the vehicle.

    Taking it at the look-ahead point instead would bring the vehicle to rest
    one look-ahead short of a stop line.
    """
    xy, _, speed = path_arrays(path)
    return float(speed[closest_index(xy, (pose.x, pose.y))])


@dataclass(frozen=True)
class ControlOutput:
    steer: float
    accel: float
    error: TrackingError
    v_ref: float


def control_step(
    pose: Pose2D,
    path: Sequence[Waypoint],
    v: float,
    gains: ControllerGains,
    params: BicycleParams,
    pi: PiController,
) -> ControlOutput:
    """Lateral command from the look-ahead tracking point, longitudinal from the closest waypoint's speed."""
    if len(path) == 0:
        raise ValueError("control_step needs a non-empty path")
    target = tracking_point(path, pose, gains.lookahead)
    err = errors_to_point(pose, target)
    steer = fbl_steering(err, v, gains, params)
    v_ref = reference_speed(path, pose)
    accel = pi_longitudinal(v_ref, v, pi, params.t_s)
    return ControlOutput(steer, accel, err, v_ref)
