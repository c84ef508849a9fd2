"""Lane-marking extraction and quadratic centerline fitting.

Two evidence paths feed the centerline fit:

* steerable second-derivative-of-Gaussian filters over a bird's-eye-view
  raster, steered along the expected lane direction;
* intensity steps along LiDAR rings (paint reflects more than asphalt),
  accumulated over a sliding window of scans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .geometry import Pose2D, QuadraticCenterline, RasterGeometry, eval_centerline


class DegenerateInputError(ValueError):
    """Raised when a fit has too few or degenerate samples."""


@dataclass(frozen=True)
class BevRaster:
    geometry: RasterGeometry
    intensity: np.ndarray

    def __post_init__(self) -> None:
        img = np.asarray(self.intensity, dtype=float)
        if img.shape != (self.geometry.rows, self.geometry.cols):
            raise ValueError(f"intensity shape {img.shape} does not match raster geometry")
        if img.size and (img.min() < 0.0 or img.max() > 1.0):
            raise ValueError("raster intensities must lie in [0, 1]")
        object.__setattr__(self, "intensity", img)


@dataclass(frozen=True)
class PixelMask:
    geometry: RasterGeometry
    cells: np.ndarray

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells, dtype=bool)
        if cells.shape != (self.geometry.rows, self.geometry.cols):
            raise ValueError("mask shape does not match raster geometry")
        object.__setattr__(self, "cells", cells)


@dataclass
class LaserScanSim:
    """One sweep: ``rings[k]`` is an (N, 4) array of x, y, z, intensity ordered by azimuth."""

    rings: list[np.ndarray]
    timestamp: float = 0.0


def _gaussian_1d(sigma: float, radius: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.arange(-radius, radius + 1, dtype=float)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    d1 = -x / sigma**2 * g
    d2 = (x * x / sigma**4 - 1.0 / sigma**2) * g
    # enforce exact zero-DC on the derivative taps
    d1 -= d1.mean()
    d2 -= d2.mean()
    return g, d1, d2


@dataclass(frozen=True)
class SteerableBank:
    """Second-derivative-of-Gaussian basis steered by the line orientation.

    Basis ``a`` responds to bright ridges running along x (rows), ``c`` to
    ridges along y (columns), ``b`` is the cross term. For a line at
    orientation ``theta`` (measured from x towards y) the ridge response is
    ``cos^2 * Ra + 2 cos sin * Rb + sin^2 * Rc``.
    """

    sigma: float = 2.0
    bright: bool = True
    radius: int = field(default=0)

    def __post_init__(self) -> None:
        if self.sigma <= 0.0:
            raise ValueError("sigma must be > 0")
        if self.radius <= 0:
            object.__setattr__(self, "radius", int(math.ceil(3.0 * self.sigma)))

    @property
    def taps(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _gaussian_1d(self.sigma, self.radius)

    def kernels(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dense 2-D basis kernels indexed [row (x), col (y)]."""
        g, d1, d2 = self.taps
        sign = 1.0 if self.bright else -1.0
        ka = -sign * np.outer(g, d2)
        kb = sign * np.outer(d1, d1)
        kc = -sign * np.outer(d2, g)
        return ka, kb, kc

    @property
    def size(self) -> int:
        return 2 * self.radius + 1


def basis_responses(raster: BevRaster, bank: SteerableBank) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Separable correlation of the raster with the three basis kernels.

    Borders replicate the edge cells so uniform regions give zero response.
    """
    img = raster.intensity
    if bank.size > min(img.shape):
        raise ValueError(f"kernel size {bank.size} larger than raster {img.shape}")
    g, d1, d2 = bank.taps
    sign = 1.0 if bank.bright else -1.0
    # axis 0 = rows = vehicle x, axis 1 = cols = vehicle y
    smooth_x = correlate1d(img, g, axis=0, mode="nearest")
    dx = correlate1d(img, d1, axis=0, mode="nearest")
    ra = -sign * correlate1d(smooth_x, d2, axis=1, mode="nearest")
    rb = sign * correlate1d(dx, d1, axis=1, mode="nearest")
    rc = -sign * correlate1d(correlate1d(img, d2, axis=0, mode="nearest"), g, axis=1, mode="nearest")
    return ra, rb, rc


def steer_response(raster: BevRaster, bank: SteerableBank, theta) -> np.ndarray:
    """Ridge response with the filter steered to ``theta``.

    ``theta`` may be a scalar or any array broadcastable to the raster (for
    instance a per-row orientation following a curved lane).
    """
    ra, rb, rc = basis_responses(raster, bank)
    return steer_combine(ra, rb, rc, theta)


def steer_combine(ra: np.ndarray, rb: np.ndarray, rc: np.ndarray, theta) -> np.ndarray:
    c = np.cos(theta)
    s = np.sin(theta)
    return c * c * ra + 2.0 * c * s * rb + s * s * rc


def extract_mask(response: np.ndarray, threshold: float, geometry: RasterGeometry | None = None) -> PixelMask:
    """Binarize at ``threshold`` times the maximum response."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    response = np.asarray(response, dtype=float)
    if geometry is None:
        geometry = RasterGeometry(response.shape[0], response.shape[1], 1.0)
    peak = float(response.max()) if response.size else 0.0
    if peak <= 0.0:
        return PixelMask(geometry, np.zeros(response.shape, dtype=bool))
    return PixelMask(geometry, response >= threshold * peak)


def mask_to_points(mask: PixelMask, geometry: RasterGeometry | None = None) -> np.ndarray:
    geometry = geometry or mask.geometry
    rows, cols = np.nonzero(mask.cells)
    xs = geometry.origin[0] + (rows + 0.5) * geometry.resolution
    ys = geometry.origin[1] + (cols + 0.5) * geometry.resolution
    return np.column_stack((xs, ys))


def lidar_intensity_edges(scan: LaserScanSim, gradient_threshold: float) -> np.ndarray:
    """Ground-plane midpoints of consecutive ring returns whose intensity jumps by the threshold."""
    if gradient_threshold <= 0.0:
        raise ValueError("gradient_threshold must be > 0")
    found = []
    for ring in scan.rings:
        ring = np.asarray(ring, dtype=float)
        if len(ring) < 2:
            continue
        jump = np.abs(np.diff(ring[:, 3]))
        hit = np.nonzero(jump >= gradient_threshold)[0]
        if hit.size:
            found.append(0.5 * (ring[hit, :2] + ring[hit + 1, :2]))
    if not found:
        return np.empty((0, 2))
    return np.vstack(found)


def accumulate_scans(edge_sets: Sequence[tuple[np.ndarray, Pose2D]], window: int) -> np.ndarray:
    """Merge the last ``window`` edge sets into the vehicle frame of the latest pose."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if not edge_sets:
        return np.empty((0, 2))
    recent = list(edge_sets)[-window:]
    latest = recent[-1][1]
    merged = []
    for pts, pose in recent:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if pose == latest:
            merged.append(pts)
        else:
            merged.append(latest.to_local(pose.to_world(pts)))
    return np.vstack(merged)


def _lstsq_quadratic(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    design = np.column_stack((x * x, x, np.ones_like(x)))
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef


def fit_quadratic(
    points: np.ndarray,
    ransac_iters: int = 100,
    inlier_tol: float = 0.1,
    seed: int = 0,
    a_max: float = 0.1,
) -> tuple[QuadraticCenterline, int]:
    """RANSAC over exact 3-point quadratics, then least squares on the best inlier set.

    Inliers are judged on the vertical residual ``|y - f(x)|``. The refit is
    re-scored and repeated while it gathers more inliers, which removes the
    bias of a lucky but tilted minimal sample.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < 3:
        raise DegenerateInputError(f"need at least 3 points for a quadratic, got {n}")
    if inlier_tol <= 0.0:
        raise ValueError("inlier_tol must be > 0")
    x, y = pts[:, 0], pts[:, 1]
    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = -1
    valid = 0
    attempts = 0
    max_attempts = max(10 * ransac_iters, 100)
    while valid < ransac_iters and attempts < max_attempts:
        attempts += 1
        idx = rng.choice(n, size=3, replace=False)
        xs = x[idx]
        if np.min(np.abs(np.diff(np.sort(xs)))) < 1e-9:
            continue
        valid += 1
        coef = np.linalg.solve(np.column_stack((xs * xs, xs, np.ones(3))), y[idx])
        resid = np.abs(y - (coef[0] * x * x + coef[1] * x + coef[2]))
        inliers = resid <= inlier_tol
        count = int(inliers.sum())
        if count > best_count:
            best_count, best_mask = count, inliers
    if best_mask is None:
        raise DegenerateInputError("no minimal sample with three distinct x values")
    if len(np.unique(x[best_mask])) < 3:
        raise DegenerateInputError("inlier set does not span three distinct x values")
    coef = _lstsq_quadratic(x[best_mask], y[best_mask])
    # local optimisation: re-score with the refit and keep going while the consensus grows
    for _ in range(5):
        mask = np.abs(y - (coef[0] * x * x + coef[1] * x + coef[2])) <= inlier_tol
        count = int(mask.sum())
        if count <= best_count or len(np.unique(x[mask])) < 3:
            break
        best_mask, best_count = mask, count
        coef = _lstsq_quadratic(x[best_mask], y[best_mask])
    a, b, c = coef
    a = float(np.clip(a, -a_max, a_max))
    return QuadraticCenterline(a, float(b), float(c), a_max=a_max), best_count


def shift_to_centerline(points: np.ndarray, prior: QuadraticCenterline, lane_width: float) -> np.ndarray:
    """Move lane-line points onto the ego centerline.

    Each point is assigned to the nearest painted line (half a lane width
    plus a whole number of lane widths from ``prior``) and shifted by that
    line's offset.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return pts
    rel = pts[:, 1] - eval_centerline(prior, pts[:, 0])
    k = np.round((rel - 0.5 * lane_width) / lane_width)
    line_offset = k * lane_width + 0.5 * lane_width
    return np.column_stack((pts[:, 0], pts[:, 1] - line_offset))


@dataclass(frozen=True)
class PerceptionConfig:
    sigma: float = 2.0
    mask_threshold: float = 0.5
    lidar_gradient: float = 0.3
    scan_window: int = 5
    ransac_iters: int = 60
    inlier_tol: float = 0.15
    min_points: int = 12
    # only the near field is fitted: past a tight corner the lane is not a function of x
    fit_x_max: float = 8.0
    a_max: float = 0.2


def raster_centerline(
    raster: BevRaster,
    prior: QuadraticCenterline,
    lane_width: float,
    cfg: PerceptionConfig,
    seed: int,
) -> QuadraticCenterline | None:
    """Steerable-filter path: raster -> ridge mask -> centerline fit (``None`` on failure)."""
    bank = SteerableBank(cfg.sigma)
    xs, _ = raster.geometry.cell_centers()
    theta = np.arctan(prior.slope(xs))[:, None]
    response = steer_response(raster, bank, theta)
    mask = extract_mask(response, cfg.mask_threshold, raster.geometry)
    pts = mask_to_points(mask)
    return _fit_or_none(shift_to_centerline(pts, prior, lane_width), cfg, seed)


def lidar_centerline(
    points: np.ndarray,
    prior: QuadraticCenterline,
    lane_width: float,
    cfg: PerceptionConfig,
    seed: int,
) -> QuadraticCenterline | None:
    """LiDAR path: accumulated intensity-edge points -> centerline fit."""
    return _fit_or_none(shift_to_centerline(points, prior, lane_width), cfg, seed)


def _fit_or_none(pts: np.ndarray, cfg: PerceptionConfig, seed: int) -> QuadraticCenterline | None:
    pts = pts[pts[:, 0] <= cfg.fit_x_max]
    if len(pts) < cfg.min_points:
        return None
    try:
        fit, count = fit_quadratic(pts, cfg.ransac_iters, cfg.inlier_tol, seed, cfg.a_max)
    except DegenerateInputError:
        return None
    if count < cfg.min_points:
        return None
    return fit
