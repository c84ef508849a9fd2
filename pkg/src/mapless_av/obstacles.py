"""2.5-D elevation mapping, traversability scoring, in-lane obstacle clustering and plane ranging."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import QuadraticCenterline, eval_centerline
from .perception import DegenerateInputError


@dataclass(frozen=True)
class GridGeometry:
    """Square cells covering ``x in [x_min, x_min + length)`` and ``y in [-width/2, width/2)``."""

    length: float = 35.0
    width: float = 35.0
    resolution: float = 0.25
    x_min: float = 0.0

    def __post_init__(self) -> None:
        if self.resolution <= 0.0:
            raise ValueError("grid resolution must be > 0")

    @property
    def shape(self) -> tuple[int, int]:
        return (int(round(self.length / self.resolution)), int(round(self.width / self.resolution)))

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        rows, cols = self.shape
        xs = self.x_min + (np.arange(rows) + 0.5) * self.resolution
        ys = -0.5 * self.width + (np.arange(cols) + 0.5) * self.resolution
        return xs, ys


@dataclass(frozen=True)
class ElevationGrid:
    geometry: GridGeometry
    height: np.ndarray  # NaN where no sample landed
    count: np.ndarray

    @property
    def known(self) -> np.ndarray:
        return self.count > 0


@dataclass(frozen=True)
class TraversabilityGrid:
    geometry: GridGeometry
    score: np.ndarray  # NaN marks unknown cells

    @property
    def known(self) -> np.ndarray:
        return ~np.isnan(self.score)


@dataclass(frozen=True)
class ObstacleCluster:
    cells: np.ndarray  # (K, 2) row, col
    centroid: tuple[float, float]
    range: float
    extent: tuple[float, float]


@dataclass(frozen=True)
class PlaneFit:
    normal: np.ndarray
    offset: float
    rms: float


@dataclass(frozen=True)
class TraversabilityParams:
    w_slope: float = 0.7
    w_rough: float = 0.3
    slope_crit: float = 0.4
    rough_crit: float = 0.1
    smooth: bool = True


def build_elevation(
    points: np.ndarray, geometry: GridGeometry = GridGeometry(), fov_deg: float = 120.0
) -> ElevationGrid:
    """Bin vehicle-frame (N, 3) points into the forward grid keeping the highest z per cell.

    Points outside the forward horizontal field of view or the grid extent
    are dropped.
    """
    rows, cols = geometry.shape
    height = np.full((rows, cols), np.nan)
    count = np.zeros((rows, cols), dtype=np.int64)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return ElevationGrid(geometry, height, count)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    half_fov = math.radians(fov_deg) / 2.0
    keep = (x > 0.0) & (np.abs(np.arctan2(y, x)) <= half_fov) & np.isfinite(z)
    r = np.floor((x - geometry.x_min) / geometry.resolution).astype(np.int64)
    c = np.floor((y + 0.5 * geometry.width) / geometry.resolution).astype(np.int64)
    keep &= (r >= 0) & (r < rows) & (c >= 0) & (c < cols)
    r, c, z = r[keep], c[keep], z[keep]
    flat = r * cols + c
    np.add.at(count.reshape(-1), flat, 1)
    top = np.full(rows * cols, -np.inf)
    np.maximum.at(top, flat, z)
    height = np.where(count > 0, top.reshape(rows, cols), np.nan)
    return ElevationGrid(geometry, height, count)


def _neighbor_slope(h: np.ndarray, res: float) -> np.ndarray:
    slope = np.zeros_like(h)
    padded = np.pad(h, 1, constant_values=np.nan)
    center = padded[1:-1, 1:-1]
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb = padded[1 + dr : padded.shape[0] - 1 + dr, 1 + dc : padded.shape[1] - 1 + dc]
        diff = np.abs(nb - center)
        slope = np.fmax(slope, np.where(np.isnan(diff), 0.0, diff))
    return slope / res


def _window_std(h: np.ndarray) -> np.ndarray:
    known = ~np.isnan(h)
    filled = np.where(known, h, 0.0)
    n = ndimage.uniform_filter(known.astype(float), 3, mode="constant") * 9.0
    # remove the local mean before squaring to keep the variance accurate for large offsets
    n_safe = np.maximum(n, 1.0)
    mean = ndimage.uniform_filter(filled, 3, mode="constant") * 9.0 / n_safe
    dev = np.where(known, h - mean, 0.0)
    s1 = ndimage.uniform_filter(dev, 3, mode="constant") * 9.0
    s2 = ndimage.uniform_filter(dev * dev, 3, mode="constant") * 9.0
    var = np.maximum(s2 / n_safe - (s1 / n_safe) ** 2, 0.0)
    return np.sqrt(var)


def traversability(grid: ElevationGrid, params: TraversabilityParams = TraversabilityParams()) -> TraversabilityGrid:
    """Score each known cell from local slope and roughness (1 = fully traversable)."""
    h = grid.height
    known = ~np.isnan(h)
    slope = _neighbor_slope(h, grid.geometry.resolution)
    rough = _window_std(h)
    penalty = params.w_slope * np.minimum(1.0, slope / params.slope_crit) + params.w_rough * np.minimum(
        1.0, rough / params.rough_crit
    )
    score = 1.0 - np.clip(penalty, 0.0, 1.0)
    if params.smooth:
        filled = np.where(known, score, 0.0)
        num = ndimage.uniform_filter(filled, 3, mode="constant")
        den = ndimage.uniform_filter(known.astype(float), 3, mode="constant")
        score = np.where(den > 0, num / np.maximum(den, 1e-12), 1.0)
    score = np.where(known, np.clip(score, 0.0, 1.0), np.nan)
    return TraversabilityGrid(grid.geometry, score)


def lane_corridor(centerline: QuadraticCenterline, lane_width: float, x_max: float, x_min: float = 0.0, step: float = 0.5) -> np.ndarray:
    """Polygon (M, 2) bounding the ego lane between its painted lines."""
    xs = np.arange(x_min, x_max + step, step)
    yc = eval_centerline(centerline, xs)
    left = np.column_stack((xs, yc + 0.5 * lane_width))
    right = np.column_stack((xs, yc - 0.5 * lane_width))
    return np.vstack((left, right[::-1]))


def points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd rule containment for (N, 2) points."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    poly = np.asarray(polygon, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x0, y0 = poly[:, 0][None, :], poly[:, 1][None, :]
    x1, y1 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    straddle = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    hits = straddle & (x < x_cross)
    return (np.sum(hits, axis=1) % 2) == 1


def detect_obstacles(
    trav: TraversabilityGrid,
    corridor: np.ndarray | None,
    threshold: float = 0.5,
    min_cluster_size: int = 3,
) -> list[ObstacleCluster]:
    """8-connected clusters of low-traversability cells inside the corridor, nearest first."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    xs, ys = trav.geometry.cell_centers()
    occupied = trav.known & (np.nan_to_num(trav.score, nan=1.0) < threshold)
    if corridor is not None:
        rr, cc = np.nonzero(occupied)
        if rr.size:
            inside = points_in_polygon(np.column_stack((xs[rr], ys[cc])), corridor)
            occupied = np.zeros_like(occupied)
            occupied[rr[inside], cc[inside]] = True
    labels, n = ndimage.label(occupied, structure=np.ones((3, 3), dtype=int))
    clusters = []
    res = trav.geometry.resolution
    for k in range(1, n + 1):
        rr, cc = np.nonzero(labels == k)
        if rr.size < min_cluster_size:
            continue
        cx, cy = float(xs[rr].mean()), float(ys[cc].mean())
        extent = (float((rr.max() - rr.min() + 1) * res), float((cc.max() - cc.min() + 1) * res))
        clusters.append(ObstacleCluster(np.column_stack((rr, cc)), (cx, cy), math.hypot(cx, cy), extent))
    clusters.sort(key=lambda cl: cl.range)
    return clusters


def fit_plane_distance(points: np.ndarray, origin=(0.0, 0.0, 0.0)) -> tuple[PlaneFit, float]:
    """Least-squares plane through the centroid along the smallest principal direction.

    Returns the fit and the distance from ``origin`` to the plane.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateInputError(f"need at least 3 points for a plane, got {len(pts)}")
    centroid = pts.mean(axis=0)
    _, sv, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    scale = max(sv[0], 1e-300)
    if len(sv) < 2 or sv[1] / scale < 1e-9:
        raise DegenerateInputError("points are collinear; plane is undetermined")
    normal = vt[-1]
    normal = normal / np.linalg.norm(normal)
    offset = float(normal @ centroid)
    if offset < 0.0:
        normal, offset = -normal, -offset
    rms = float(np.sqrt(np.mean((pts @ normal - offset) ** 2)))
    distance = abs(float(normal @ np.asarray(origin, dtype=float)) - offset)
    return PlaneFit(normal, offset, rms), distance
