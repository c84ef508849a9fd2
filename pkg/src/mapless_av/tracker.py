"""Linear Kalman filter over the centerline coefficients [a, b, c].

The lane parameters follow a random walk and every detector observes them
directly, so both the transition and the observation matrices are the
identity. Detectors run at different rates; measurements are applied
asynchronously on a fixed prediction tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .geometry import A_MAX_DEFAULT, QuadraticCenterline

TICK = 1.0 / 26.0
SOURCE_PRIORITY = ("steerable", "lidar", "cnn-slot")

DEFAULT_R = np.diag([1e-8, 1e-6, 1e-4])
DEFAULT_OMEGA_STEERABLE = np.diag([1e-6, 1e-4, 1e-2])


class UnknownSourceError(KeyError):
    pass


class OutOfOrderError(ValueError):
    pass


def _default_omega() -> dict[str, np.ndarray]:
    return {"steerable": DEFAULT_OMEGA_STEERABLE.copy(), "lidar": 2.0 * DEFAULT_OMEGA_STEERABLE}


@dataclass(frozen=True)
class NoiseModel:
    R: np.ndarray = field(default_factory=lambda: DEFAULT_R.copy())
    omega: Mapping[str, np.ndarray] = field(default_factory=_default_omega)

    def __post_init__(self) -> None:
        R = np.asarray(self.R, dtype=float)
        if R.shape != (3, 3) or not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() < -1e-15:
            raise ValueError("R must be a symmetric PSD 3x3 matrix")
        omega = {}
        for name, om in self.omega.items():
            om = np.asarray(om, dtype=float)
            if om.shape == (3,):
                om = np.diag(om)
            if om.shape != (3, 3) or np.any(om - np.diag(np.diag(om))) or np.any(np.diag(om) <= 0.0):
                raise ValueError(f"Omega for source {name!r} must be diagonal with positive entries")
            omega[name] = om
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "omega", omega)

    @classmethod
    def from_sigmas(cls, R_diag, sigmas: Mapping[str, Iterable[float]]) -> "NoiseModel":
        return cls(np.diag(np.asarray(R_diag, dtype=float)),
                   {k: np.diag(np.square(np.asarray(v, dtype=float))) for k, v in sigmas.items()})


@dataclass(frozen=True)
class LaneMeasurement:
    source: str
    y: np.ndarray
    timestamp: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.timestamp):
            raise ValueError("measurement timestamp must be finite")
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).reshape(3))


@dataclass(frozen=True)
class LaneKalmanState:
    x: np.ndarray
    P: np.ndarray
    last_update_time: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(3))
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float).reshape(3, 3))

    @classmethod
    def initial(cls, estimate=(0.0, 0.0, 0.0), P=None, t: float = 0.0) -> "LaneKalmanState":
        if P is None:
            P = np.diag([1e-4, 1e-2, 1.0])
        return cls(np.array(estimate, dtype=float), np.array(P, dtype=float), t)

    @property
    def estimate(self) -> QuadraticCenterline:
        return self.bounded()

    def bounded(self, a_max: float = A_MAX_DEFAULT) -> QuadraticCenterline:
        """The mean as a centerline; the curvature sanity bound is enforced here, where the state is consumed."""
        a, b, c = self.x
        return QuadraticCenterline(float(np.clip(a, -a_max, a_max)), float(b), float(c), a_max=a_max)


def predict(state: LaneKalmanState, noise: NoiseModel) -> LaneKalmanState:
    return replace(state, P=state.P + noise.R)


def update(state: LaneKalmanState, meas: LaneMeasurement, noise: NoiseModel) -> LaneKalmanState:
    try:
        omega = noise.omega[meas.source]
    except KeyError:
        raise UnknownSourceError(f"no measurement noise configured for source {meas.source!r}") from None
    P = state.P
    S = P + omega
    K = np.linalg.solve(S.T, P.T).T  # P @ inv(S)
    x = state.x + K @ (meas.y - state.x)
    P_new = (np.eye(3) - K) @ P
    P_new = 0.5 * (P_new + P_new.T)
    return LaneKalmanState(x, P_new, meas.timestamp)


def tick_index(t: float, tick: float = TICK) -> int:
    return int(math.floor(t / tick + 0.5))


def _priority(source: str) -> int:
    try:
        return SOURCE_PRIORITY.index(source)
    except ValueError:
        return len(SOURCE_PRIORITY)


def order_stream(measurements: Iterable[LaneMeasurement], tick: float = TICK) -> list[LaneMeasurement]:
    """Sort by tick and break ties by source priority (stable otherwise)."""
    return sorted(measurements, key=lambda m: (tick_index(m.timestamp, tick), _priority(m.source)))


class LaneTracker:
    """Sequential filter that owns a :class:`LaneKalmanState`.

    Not thread-safe; drive it from a single loop.
    """

    def __init__(self, state: LaneKalmanState, noise: NoiseModel, tick: float = TICK) -> None:
        self.state = state
        self.noise = noise
        self.tick = tick
        self._tick = tick_index(state.last_update_time, tick)

    def advance_to(self, t: float) -> None:
        target = tick_index(t, self.tick)
        if target < self._tick:
            raise OutOfOrderError(f"time {t} is before the filter's current tick")
        for _ in range(target - self._tick):
            self.state = predict(self.state, self.noise)
        self._tick = target

    def ingest(self, meas: LaneMeasurement) -> LaneKalmanState:
        if tick_index(meas.timestamp, self.tick) < self._tick:
            raise OutOfOrderError(
                f"measurement from {meas.source!r} at t={meas.timestamp} arrived after tick {self._tick}"
            )
        self.advance_to(meas.timestamp)
        self.state = update(self.state, meas, self.noise)
        return self.state

    def shift_lateral(self, offset: float) -> None:
        """Re-anchor the estimate on the lane whose center is ``offset`` meters left of the current one."""
        x = self.state.x.copy()
        x[2] += offset
        self.state = replace(self.state, x=x)


def ingest(
    state: LaneKalmanState,
    measurements: Iterable[LaneMeasurement],
    noise: NoiseModel,
    tick: float = TICK,
) -> list[LaneKalmanState]:
    """Apply a non-decreasing measurement stream; returns the initial state then one state per measurement.

    Each measurement first triggers one prediction per elapsed tick, then its
    own update with the source's Omega. Measurements landing on the same tick
    are applied in ``SOURCE_PRIORITY`` order.
    """
    stream = list(measurements)
    for prev, cur in zip(stream, stream[1:]):
        if cur.timestamp < prev.timestamp:
            raise OutOfOrderError(f"timestamp {cur.timestamp} precedes {prev.timestamp}")
    tracker = LaneTracker(state, noise, tick)
    out = [state]
    for meas in order_stream(stream, tick):
        out.append(tracker.ingest(meas))
    return out
