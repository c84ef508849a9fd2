"""Ground-truth track geometry: centerline polyline, lanes, stop lines, obstacles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.spatial import cKDTree

from .geometry import Pose2D, wrap_angles

VEHICLE_WIDTH = 1.8
DENSE_SPACING = 0.05


@dataclass(frozen=True)
class Obstacle:
    """Box standing on the road, placed by arc length and lateral offset of its center."""

    s: float
    lateral: float = 0.0
    width: float = 0.75
    depth: float = 0.75
    height: float = 1.0


@dataclass(frozen=True)
class StopTarget:
    """Stop line at arc length ``s`` with a square sign beside the road."""

    s: float
    sign_lateral: float = -2.5
    sign_size: float = 0.75
    sign_height: float = 2.0


class TrackDefinition:
    """Dense ground-truth centerline of lane 0 plus the lane layout.

    Lanes are numbered from 0 (the base centerline) towards the left; lane
    ``k`` is the base centerline offset by ``k * lane_width``.
    """

    def __init__(
        self,
        points: np.ndarray,
        lane_width: float = 3.0,
        lanes: int = 1,
        closed: bool = False,
        stop_lines: Sequence[StopTarget] = (),
        obstacles: Sequence[Obstacle] = (),
        turn_curvature: float = 0.05,
    ) -> None:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if closed and np.hypot(*(pts[0] - pts[-1])) > 1e-9:
            pts = np.vstack((pts, pts[:1]))
        if len(pts) < 2:
            raise ValueError("track needs at least two centerline points")
        seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
        if np.any(seg <= 0.0):
            raise ValueError("track arc length must be strictly increasing")
        if lane_width <= VEHICLE_WIDTH:
            raise ValueError(f"lane_width {lane_width} must exceed vehicle width {VEHICLE_WIDTH}")
        if lanes < 1:
            raise ValueError("track needs at least one lane")
        self.lane_width = float(lane_width)
        self.lanes = int(lanes)
        self.closed = bool(closed)
        self.stop_lines = tuple(stop_lines)
        self.obstacles = tuple(obstacles)
        self.turn_curvature = float(turn_curvature)

        coarse_s = np.concatenate(([0.0], np.cumsum(seg)))
        self.length = float(coarse_s[-1])
        n = max(int(math.ceil(self.length / DENSE_SPACING)), 1)
        self.s = np.linspace(0.0, self.length, n + 1)
        self.xy = np.column_stack(
            (np.interp(self.s, coarse_s, pts[:, 0]), np.interp(self.s, coarse_s, pts[:, 1]))
        )
        d = np.gradient(self.xy, self.s, axis=0)
        if self.closed:
            d[0] = d[-1] = (self.xy[1] - self.xy[-2]) / (self.s[1] + self.length - self.s[-2])
        self.heading = np.arctan2(d[:, 1], d[:, 0])
        dh = np.diff(np.unwrap(self.heading))
        kappa = np.concatenate(([0.0], dh / np.diff(self.s)))
        kappa[0] = kappa[1] if len(kappa) > 1 else 0.0
        window = max(int(round(0.5 / (self.s[1] - self.s[0]))), 1)
        self.curvature = uniform_filter1d(kappa, window, mode="wrap" if self.closed else "nearest")
        self._tree = cKDTree(self.xy)

    # -- arc-length queries -------------------------------------------------
    def _wrap_s(self, s):
        s = np.asarray(s, dtype=float)
        if self.closed:
            return np.mod(s, self.length)
        return np.clip(s, 0.0, self.length)

    def point_at(self, s) -> np.ndarray:
        s = self._wrap_s(s)
        return np.column_stack((np.interp(s, self.s, self.xy[:, 0]), np.interp(s, self.s, self.xy[:, 1])))

    def heading_at(self, s) -> np.ndarray:
        s = self._wrap_s(s)
        unwrapped = np.unwrap(self.heading)
        return wrap_angles(np.interp(s, self.s, unwrapped))

    def lane_points(self, s, lane: int = 0) -> np.ndarray:
        """World positions on the centerline of ``lane`` at arc lengths ``s``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        base = self.point_at(s)
        h = self.heading_at(s)
        off = lane * self.lane_width
        return base + off * np.column_stack((-np.sin(h), np.cos(h)))

    def pose_at(self, s: float, lane: int = 0, lateral: float = 0.0, heading_offset: float = 0.0) -> Pose2D:
        s_arr = np.array([s])
        (x, y), = self.point_at(s_arr)
        h = float(self.heading_at(s_arr)[0])
        off = lane * self.lane_width + lateral
        return Pose2D(x - off * math.sin(h), y + off * math.cos(h), h + heading_offset)

    def is_turn(self, s) -> np.ndarray:
        s = self._wrap_s(s)
        k = np.interp(s, self.s, np.abs(self.curvature))
        return k >= self.turn_curvature

    # -- projection ----------------------------------------------------------
    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Arc length and signed (left-positive) offset of world points from lane 0."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        _, idx = self._tree.query(pts)
        return self._refine(pts, idx)

    def project_near(self, point: tuple[float, float], s_hint: float, window: float = 5.0) -> tuple[float, float]:
        """Projection restricted to arc lengths within ``window`` of ``s_hint``."""
        pts = np.asarray(point, dtype=float).reshape(1, 2)
        if self.closed:
            cand = np.mod(np.arange(s_hint - window, s_hint + window, DENSE_SPACING), self.length)
        else:
            cand = np.arange(max(0.0, s_hint - window), min(self.length, s_hint + window) + DENSE_SPACING, DENSE_SPACING)
            cand = np.clip(cand, 0.0, self.length)
        idx_c = np.clip(np.round(cand / (self.s[1] - self.s[0])).astype(int), 0, len(self.s) - 1)
        d2 = np.sum((self.xy[idx_c] - pts) ** 2, axis=1)
        idx = np.array([idx_c[int(np.argmin(d2))]])
        s, off = self._refine(pts, idx)
        return float(s[0]), float(off[0])

    def _refine(self, pts: np.ndarray, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.s)
        best_s = np.empty(len(pts))
        best_off = np.empty(len(pts))
        best_d = np.full(len(pts), np.inf)
        for shift in (-1, 0):
            i0 = idx + shift
            if self.closed:
                i0 = np.mod(i0, n - 1)
            else:
                i0 = np.clip(i0, 0, n - 2)
            p0 = self.xy[i0]
            p1 = self.xy[i0 + 1]
            seg = p1 - p0
            seg_len2 = np.sum(seg * seg, axis=1)
            t = np.clip(np.sum((pts - p0) * seg, axis=1) / seg_len2, 0.0, 1.0)
            foot = p0 + seg * t[:, None]
            rel = pts - foot
            dist = np.hypot(rel[:, 0], rel[:, 1])
            seg_len = np.sqrt(seg_len2)
            cross = (seg[:, 0] * rel[:, 1] - seg[:, 1] * rel[:, 0]) / seg_len
            better = dist < best_d
            best_d = np.where(better, dist, best_d)
            best_s = np.where(better, self.s[i0] + t * seg_len, best_s)
            best_off = np.where(better, cross, best_off)
        return best_s, best_off

    # -- lane markings -------------------------------------------------------
    def line_offsets(self) -> np.ndarray:
        """Lateral offsets of painted lines relative to lane 0's centerline."""
        return (np.arange(self.lanes + 1) - 0.5) * self.lane_width


def paper_track(
    length: float = 200.0,
    turn_radius: float = 3.0,
    lane_width: float = 3.0,
    aspect: float = 2.0,
    step: float = DENSE_SPACING,
    lanes: int = 1,
) -> TrackDefinition:
    """Closed rounded rectangle of total centerline length ``length`` with four 90-degree turns."""
    straight_total = length - 2.0 * math.pi * turn_radius
    if straight_total <= 0.0:
        raise ValueError("track too short for the requested turn radius")
    # two long sides of length la and two short sides lb, la = aspect * lb
    lb = straight_total / (2.0 * (1.0 + aspect))
    la = aspect * lb
    pts: list[tuple[float, float]] = []
    x, y, h = 0.0, 0.0, 0.0

    def straight(dist: float) -> None:
        nonlocal x, y
        n = max(int(math.ceil(dist / step)), 1)
        for i in range(1, n + 1):
            pts.append((x + math.cos(h) * dist * i / n, y + math.sin(h) * dist * i / n))
        x, y = pts[-1]

    def turn() -> None:
        nonlocal x, y, h
        cx, cy = x - turn_radius * math.sin(h), y + turn_radius * math.cos(h)
        arc = 0.5 * math.pi * turn_radius
        n = max(int(math.ceil(arc / step)), 1)
        for i in range(1, n + 1):
            a = h + 0.5 * math.pi * i / n
            pts.append((cx + turn_radius * math.sin(a), cy - turn_radius * math.cos(a)))
        h += 0.5 * math.pi
        x, y = pts[-1]

    pts.append((x, y))
    straight(la / 2.0)
    for side in (lb, la, lb):
        turn()
        straight(side)
    turn()
    straight(la / 2.0)
    pts[-1] = pts[0]
    return TrackDefinition(
        np.array(pts[:-1]), lane_width=lane_width, lanes=lanes, closed=True,
        turn_curvature=0.5 / turn_radius,
    )


def straight_track(length: float = 100.0, lane_width: float = 3.0, lanes: int = 1, **kwargs) -> TrackDefinition:
    pts = np.column_stack((np.linspace(0.0, length, 11), np.zeros(11)))
    return TrackDefinition(pts, lane_width=lane_width, lanes=lanes, **kwargs)
