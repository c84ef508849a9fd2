"""Frames, poses, centerline evaluation and tracking-error computation.

Conventions used everywhere in the package:

* vehicle frame: x forward, y to the left, origin at the rear axle;
* world frame: fixed planar metric frame;
* headings in radians, normalized to (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

A_MAX_DEFAULT = 0.1


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def wrap_angles(angles: np.ndarray) -> np.ndarray:
    out = np.remainder(np.asarray(angles, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    return np.where(out <= -math.pi, out + 2.0 * math.pi, out)


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """Express world-frame (N, 2) points in this pose's frame."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        c, s = math.cos(self.heading), math.sin(self.heading)
        dx = pts[:, 0] - self.x
        dy = pts[:, 1] - self.y
        return np.column_stack((c * dx + s * dy, -s * dx + c * dy))

    def to_world(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 2) points from this pose's frame into the world frame."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.column_stack(
            (self.x + c * pts[:, 0] - s * pts[:, 1], self.y + s * pts[:, 0] + c * pts[:, 1])
        )

    def compose(self, other: "Pose2D") -> "Pose2D":
        """Pose of ``other`` (given in this frame) expressed in the parent frame."""
        (wx, wy), = self.to_world(np.array([[other.x, other.y]]))
        return Pose2D(wx, wy, self.heading + other.heading)

    def relative_to(self, ref: "Pose2D") -> "Pose2D":
        """This pose expressed in the frame of ``ref``."""
        (lx, ly), = ref.to_local(np.array([[self.x, self.y]]))
        return Pose2D(lx, ly, self.heading - ref.heading)


@dataclass(frozen=True)
class QuadraticCenterline:
    """Ego-lane centerline ``y = a*x**2 + b*x + c`` in the vehicle frame."""

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    a_max: float = field(default=A_MAX_DEFAULT, compare=False, repr=False)

    def __post_init__(self) -> None:
        for name in ("a", "b", "c"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"centerline coefficient {name} is not finite: {value}")
            object.__setattr__(self, name, value)
        if abs(self.a) > self.a_max:
            raise ValueError(f"|a|={abs(self.a):.4g} exceeds sanity bound {self.a_max}")

    @classmethod
    def from_vector(cls, vec: Sequence[float], a_max: float = A_MAX_DEFAULT) -> "QuadraticCenterline":
        a, b, c = (float(v) for v in vec)
        return cls(a, b, c, a_max=a_max)

    def as_vector(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def slope(self, x):
        return 2.0 * self.a * np.asarray(x, dtype=float) + self.b

    def curvature(self, x):
        fp = self.slope(x)
        return 2.0 * self.a / (1.0 + fp * fp) ** 1.5


def eval_centerline(c: QuadraticCenterline, x):
    """Lateral position of the centerline at longitudinal distance ``x``."""
    if np.ndim(x) == 0:
        x = float(x)
        return c.a * x * x + c.b * x + c.c
    x = np.asarray(x, dtype=float)
    return c.a * x * x + c.b * x + c.c


@dataclass(frozen=True)
class Waypoint:
    position: Pose2D
    curvature: float = 0.0
    speed: float = 0.0

    def __post_init__(self) -> None:
        if self.speed < 0.0:
            raise ValueError(f"waypoint speed must be >= 0, got {self.speed}")


@dataclass(frozen=True)
class TrackingError:
    e_lateral: float
    e_heading: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "e_heading", wrap_angle(float(self.e_heading)))


def sample_waypoints(
    c: QuadraticCenterline, spacing: float, horizon: float, speed: float = 0.0
) -> list[Waypoint]:
    """Discretize the centerline at longitudinal steps of ``spacing`` up to ``horizon``."""
    if spacing <= 0.0:
        raise ValueError("spacing must be > 0")
    n = int(math.floor(horizon / spacing + 1e-9)) + 1 if horizon >= spacing else 1
    xs = np.arange(n) * spacing
    ys = eval_centerline(c, xs)
    headings = np.arctan(c.slope(xs))
    kappa = c.curvature(xs)
    return [
        Waypoint(Pose2D(float(x), float(y), float(h)), float(k), speed)
        for x, y, h, k in zip(xs, ys, headings, kappa)
    ]


def path_arrays(path: Sequence[Waypoint]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(N, 2) positions, headings and speeds of a waypoint sequence."""
    xy = np.array([[w.position.x, w.position.y] for w in path], dtype=float).reshape(-1, 2)
    heading = np.array([w.position.heading for w in path], dtype=float)
    speed = np.array([w.speed for w in path], dtype=float)
    return xy, heading, speed


def closest_index(xy: np.ndarray, point: tuple[float, float]) -> int:
    d2 = (xy[:, 0] - point[0]) ** 2 + (xy[:, 1] - point[1]) ** 2
    return int(np.argmin(d2))


@dataclass(frozen=True)
class TrackingPoint:
    x: float
    y: float
    heading: float
    speed: float
    index: int


def tracking_point(path: Sequence[Waypoint], pose: Pose2D, lookahead: float) -> TrackingPoint:
    """Point ``lookahead`` meters of arc length past the waypoint closest to ``pose``.

    Positions are interpolated linearly between waypoints; headings are
    interpolated on the shortest arc. Saturates at the last waypoint.
    """
    if len(path) == 0:
        raise ValueError("tracking point requested on an empty path")
    if lookahead < 0.0:
        raise ValueError("lookahead must be >= 0")
    xy, heading, speed = path_arrays(path)
    i0 = closest_index(xy, (pose.x, pose.y))
    if len(path) == 1:
        return TrackingPoint(xy[0, 0], xy[0, 1], heading[0], speed[0], 0)
    seg = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
    s = np.concatenate(([0.0], np.cumsum(seg)))
    target = s[i0] + lookahead
    if target >= s[-1]:
        return TrackingPoint(xy[-1, 0], xy[-1, 1], heading[-1], speed[-1], len(path) - 1)
    j = int(np.searchsorted(s, target, side="right")) - 1
    j = min(max(j, 0), len(path) - 2)
    span = s[j + 1] - s[j]
    t = 0.0 if span <= 0.0 else (target - s[j]) / span
    x = xy[j, 0] + t * (xy[j + 1, 0] - xy[j, 0])
    y = xy[j, 1] + t * (xy[j + 1, 1] - xy[j, 1])
    h = heading[j] + t * wrap_angle(heading[j + 1] - heading[j])
    v = speed[j] + t * (speed[j + 1] - speed[j])
    return TrackingPoint(float(x), float(y), wrap_angle(float(h)), float(v), j)


def errors_to_point(pose: Pose2D, point: TrackingPoint) -> TrackingError:
    c, s = math.cos(point.heading), math.sin(point.heading)
    dx, dy = pose.x - point.x, pose.y - point.y
    return TrackingError(-s * dx + c * dy, pose.heading - point.heading)


def tracking_errors(pose: Pose2D, path: Sequence[Waypoint], lookahead: float) -> TrackingError:
    """Signed lateral (left-positive) and heading error of ``pose`` w.r.t. the tracking point."""
    return errors_to_point(pose, tracking_point(path, pose, lookahead))


@dataclass(frozen=True)
class RasterGeometry:
    """Cell layout of a bird's-eye-view raster.

    Rows advance along vehicle x, columns along vehicle y; ``origin`` is the
    metric position of the outer corner of cell (0, 0).
    """

    rows: int
    cols: int
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.resolution <= 0.0:
            raise ValueError("raster resolution must be > 0")
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("raster must have at least one cell")

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Metric x of every row and y of every column."""
        xs = self.origin[0] + (np.arange(self.rows) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.cols) + 0.5) * self.resolution
        return xs, ys


def bev_project(pixel: tuple[int, int], geometry: RasterGeometry) -> tuple[float, float]:
    row, col = pixel
    if not (0 <= row < geometry.rows and 0 <= col < geometry.cols):
        raise IndexError(f"pixel {pixel} outside raster of shape ({geometry.rows}, {geometry.cols})")
    return (
        geometry.origin[0] + (row + 0.5) * geometry.resolution,
        geometry.origin[1] + (col + 0.5) * geometry.resolution,
    )
