"""Synthetic sensing from ground-truth track geometry.

Everything here is seeded through the ``numpy.random.Generator`` passed in,
so a scenario replays bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import Pose2D, RasterGeometry
from .perception import BevRaster, LaserScanSim
from .track import Obstacle, StopTarget, TrackDefinition
from .tracker import LaneMeasurement


@dataclass(frozen=True)
class SourceConfig:
    sigma: tuple[float, float, float] = (1e-3, 1e-2, 0.1)
    rate: float = 26.0
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.rate <= 0.0:
            raise ValueError("sensor rate must be > 0")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must be a probability")


def _default_sources() -> dict[str, SourceConfig]:
    s = (1e-3, 1e-2, 0.1)
    return {
        "steerable": SourceConfig(s, 26.0, 0.0),
        "lidar": SourceConfig(tuple(math.sqrt(2.0) * v for v in s), 10.0, 0.0),
    }


@dataclass(frozen=True)
class BevConfig:
    x_near: float = 2.0
    x_far: float = 14.0
    half_width: float = 4.5
    resolution: float = 0.1
    paint_width: float = 0.15
    asphalt: float = 0.2
    paint: float = 0.9
    noise: float = 0.05

    def geometry(self) -> RasterGeometry:
        rows = int(round((self.x_far - self.x_near) / self.resolution))
        cols = int(round(2.0 * self.half_width / self.resolution))
        return RasterGeometry(rows, cols, self.resolution, (self.x_near, -self.half_width))


@dataclass(frozen=True)
class LidarConfig:
    height: float = 1.8
    rings: int = 32
    elev_top_deg: float = -1.0
    elev_bottom_deg: float = -25.0
    azimuth_step_deg: float = 0.25
    fov_deg: float = 120.0
    max_range: float = 40.0
    asphalt: float = 0.1
    paint: float = 0.8
    obstacle: float = 0.5
    intensity_noise: float = 0.02
    z_noise: float = 0.01

    def elevations(self) -> np.ndarray:
        return np.radians(np.linspace(self.elev_top_deg, self.elev_bottom_deg, self.rings))

    def azimuths(self) -> np.ndarray:
        half = 0.5 * self.fov_deg
        n = int(round(self.fov_deg / self.azimuth_step_deg)) + 1
        return np.radians(np.linspace(-half, half, n))


@dataclass(frozen=True)
class StopSensorConfig:
    detect_range: float = 30.0
    half_fov_deg: float = 45.0
    grid: int = 8
    noise: float = 0.02


@dataclass(frozen=True)
class SensorConfig:
    sources: dict[str, SourceConfig] = field(default_factory=_default_sources)
    fit_spacing: float = 0.25
    fit_reach: float = 8.0
    fit_max_heading: float = 0.75
    min_fit_points: int = 8
    # 3 m radius turns need |a| near 1/6, above the generic 0.1 sanity bound
    a_max: float = 0.2
    bev: BevConfig = BevConfig()
    lidar: LidarConfig = LidarConfig()
    stop: StopSensorConfig = StopSensorConfig()


def _lane_offset(track: TrackDefinition, pose: Pose2D, s_hint: Optional[float]) -> tuple[float, float]:
    if s_hint is None:
        s, off = track.project(np.array([[pose.x, pose.y]]))
        return float(s[0]), float(off[0])
    return track.project_near((pose.x, pose.y), s_hint)


def true_centerline_points(
    pose: Pose2D, track: TrackDefinition, lane: int, cfg: SensorConfig, s_hint: Optional[float] = None
) -> Optional[np.ndarray]:
    """Lane-center points ahead of the vehicle, in the vehicle frame.

    Sampling starts at the vehicle's station and runs ``fit_reach`` meters
    forward, cut at the first point that leaves the lateral window or whose
    direction differs from the vehicle heading by more than
    ``fit_max_heading``: beyond that the lane is no longer a function of x.
    """
    s_v, off = _lane_offset(track, pose, s_hint)
    if abs(off - lane * track.lane_width) > track.lane_width:
        return None
    s = s_v + np.arange(0.0, cfg.fit_reach, cfg.fit_spacing)
    if not track.closed:
        s = s[s <= track.length]
    local = pose.to_local(track.lane_points(s, lane))
    rel = np.abs(np.angle(np.exp(1j * (track.heading_at(s) - pose.heading))))
    ok = (np.abs(local[:, 1]) <= cfg.bev.half_width) & (rel <= cfg.fit_max_heading)
    bad = np.nonzero(~ok)[0]
    pts = local[: bad[0]] if bad.size else local
    if len(pts) < cfg.min_fit_points:
        return None
    return pts


def fit_true_centerline(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    design = np.column_stack((x * x, x, np.ones_like(x)))
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef


def synth_lane_measurement(
    pose: Pose2D,
    track: TrackDefinition,
    source: str,
    rng: np.random.Generator,
    t: float = 0.0,
    lane: int = 0,
    cfg: SensorConfig = SensorConfig(),
    s_hint: Optional[float] = None,
) -> Optional[LaneMeasurement]:
    """Least-squares quadratic through the true lane center in view, plus the source's Gaussian noise.

    Returns ``None`` when the vehicle is off the corridor, too little of the
    lane is in view, or the source drops the frame.
    """
    src = cfg.sources[source]
    # draw noise and dropout unconditionally so the random stream does not depend on geometry
    noise = rng.standard_normal(3) * np.asarray(src.sigma)
    dropped = rng.random() < src.dropout
    pts = true_centerline_points(pose, track, lane, cfg, s_hint)
    if pts is None or dropped:
        return None
    coef = fit_true_centerline(pts) + noise
    coef[0] = float(np.clip(coef[0], -cfg.a_max, cfg.a_max))
    return LaneMeasurement(source, coef, t)


# -- rasters -----------------------------------------------------------------
def _paint_coverage(track: TrackDefinition, world_pts: np.ndarray, paint_width: float, blur: float) -> np.ndarray:
    _, off = track.project(world_pts)
    d = np.min(np.abs(off[:, None] - track.line_offsets()[None, :]), axis=1)
    return np.clip((0.5 * paint_width - d) / blur + 0.5, 0.0, 1.0)


def synth_bev_raster(
    pose: Pose2D, track: TrackDefinition, rng: np.random.Generator, cfg: BevConfig = BevConfig(), noise: Optional[float] = None
) -> BevRaster:
    """Bird's-eye-view intensity raster: painted lines as bright stripes on asphalt, plus speckle."""
    geom = cfg.geometry()
    xs, ys = geom.cell_centers()
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    world = pose.to_world(np.column_stack((gx.ravel(), gy.ravel())))
    cover = _paint_coverage(track, world, cfg.paint_width, cfg.resolution).reshape(geom.rows, geom.cols)
    img = cfg.asphalt + (cfg.paint - cfg.asphalt) * cover
    sigma = cfg.noise if noise is None else noise
    speckle = rng.standard_normal(img.shape) * sigma
    if sigma > 0.0:
        img = img + speckle
    return BevRaster(geom, np.clip(img, 0.0, 1.0))


# -- lidar ---------------------------------------------------------------------
def _box_in_vehicle(track: TrackDefinition, pose: Pose2D, ob: Obstacle):
    center = track.lane_points(np.array([ob.s]), 0)[0]
    h = float(track.heading_at(np.array([ob.s]))[0])
    center = center + ob.lateral * np.array([-math.sin(h), math.cos(h)])
    (cx, cy), = pose.to_local(center[None, :])
    return cx, cy, h - pose.heading, 0.5 * ob.depth, 0.5 * ob.width, 0.0, ob.height


def _ray_box_hits(dirs: np.ndarray, origin: np.ndarray, box) -> np.ndarray:
    """Entry distance of each ray into an upright box (inf where missed)."""
    cx, cy, yaw, hx, hy, z0, z1 = box
    c, s = math.cos(yaw), math.sin(yaw)
    ox, oy = origin[0] - cx, origin[1] - cy
    lo = np.array([c * ox + s * oy, -s * ox + c * oy, origin[2]])
    ld = np.column_stack((c * dirs[:, 0] + s * dirs[:, 1], -s * dirs[:, 0] + c * dirs[:, 1], dirs[:, 2]))
    bounds = ((-hx, hx), (-hy, hy), (z0, z1))
    t_near = np.full(len(dirs), -np.inf)
    t_far = np.full(len(dirs), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k, (b0, b1) in enumerate(bounds):
            d = ld[:, k]
            t0 = (b0 - lo[k]) / d
            t1 = (b1 - lo[k]) / d
            parallel = d == 0.0
            outside = parallel & ((lo[k] < b0) | (lo[k] > b1))
            tmin = np.where(parallel, -np.inf, np.minimum(t0, t1))
            tmax = np.where(parallel, np.inf, np.maximum(t0, t1))
            tmax = np.where(outside, -np.inf, tmax)
            t_near = np.maximum(t_near, tmin)
            t_far = np.minimum(t_far, tmax)
    hit = (t_near <= t_far) & (t_near > 0.0)
    return np.where(hit, t_near, np.inf)


def synth_scan(
    pose: Pose2D,
    track: TrackDefinition,
    rng: np.random.Generator,
    cfg: LidarConfig = LidarConfig(),
    t: float = 0.0,
    with_obstacles: bool = True,
) -> LaserScanSim:
    """Forward sweep in the vehicle frame (points relative to the ground plane).

    Rays hit the flat road or the first obstacle box; painted lines return
    high intensity.
    """
    elev = cfg.elevations()
    az = cfg.azimuths()
    E, A = np.meshgrid(elev, az, indexing="ij")
    dirs = np.column_stack(
        (np.cos(E).ravel() * np.cos(A).ravel(), np.cos(E).ravel() * np.sin(A).ravel(), np.sin(E).ravel())
    )
    origin = np.array([0.0, 0.0, cfg.height])
    with np.errstate(divide="ignore"):
        t_ground = np.where(dirs[:, 2] < 0.0, -cfg.height / dirs[:, 2], np.inf)
    t_hit = t_ground.copy()
    on_obstacle = np.zeros(len(dirs), dtype=bool)
    if with_obstacles:
        for ob in track.obstacles:
            box = _box_in_vehicle(track, pose, ob)
            if math.hypot(box[0], box[1]) > cfg.max_range + 2.0:
                continue
            tb = _ray_box_hits(dirs, origin, box)
            closer = tb < t_hit
            t_hit = np.where(closer, tb, t_hit)
            on_obstacle |= closer
    pts = origin + dirs * t_hit[:, None]
    horiz = np.hypot(pts[:, 0], pts[:, 1])
    valid = np.isfinite(t_hit) & (horiz <= cfg.max_range)
    n = len(dirs)
    intensity = np.full(n, cfg.asphalt)
    ground = valid & ~on_obstacle
    if ground.any():
        world = pose.to_world(pts[ground, :2])
        cover = _paint_coverage(track, world, 0.15, 0.02)
        intensity[ground] = cfg.asphalt + (cfg.paint - cfg.asphalt) * cover
    intensity[on_obstacle] = cfg.obstacle
    inten_noise = rng.standard_normal(n) * cfg.intensity_noise
    z_noise = rng.standard_normal(n) * cfg.z_noise
    intensity = np.clip(intensity + inten_noise, 0.0, 1.0)
    pts[:, 2] = np.where(ground, 0.0, pts[:, 2]) + z_noise
    data = np.column_stack((pts, intensity)).reshape(len(elev), len(az), 4)
    mask = valid.reshape(len(elev), len(az))
    rings = [data[k][mask[k]] for k in range(len(elev))]
    return LaserScanSim(rings, t)


def scan_points(scan: LaserScanSim) -> np.ndarray:
    rings = [r[:, :3] for r in scan.rings if len(r)]
    return np.vstack(rings) if rings else np.empty((0, 3))


# -- stop signs ----------------------------------------------------------------
def stop_sign_corners(track: TrackDefinition, target: StopTarget) -> tuple[np.ndarray, np.ndarray]:
    """World-frame sign center (x, y) and the unit road direction at the stop line."""
    h = float(track.heading_at(np.array([target.s]))[0])
    base = track.lane_points(np.array([target.s]), 0)[0]
    center = base + target.sign_lateral * np.array([-math.sin(h), math.cos(h)])
    return center, np.array([math.cos(h), math.sin(h)])


def synth_stop_points(
    pose: Pose2D,
    track: TrackDefinition,
    target: StopTarget,
    rng: np.random.Generator,
    cfg: StopSensorConfig = StopSensorConfig(),
) -> Optional[np.ndarray]:
    """LiDAR returns inside the sign's image bounding box, in the vehicle frame.

    ``None`` when the sign is out of camera range or field of view.
    """
    center, direction = stop_sign_corners(track, target)
    noise = rng.standard_normal((cfg.grid * cfg.grid, 3)) * cfg.noise
    (lx, ly), = pose.to_local(center[None, :])
    if lx <= 0.0 or math.hypot(lx, ly) > cfg.detect_range or abs(math.atan2(ly, lx)) > math.radians(cfg.half_fov_deg):
        return None
    across = np.array([-direction[1], direction[0]])
    u = (np.arange(cfg.grid) + 0.5) / cfg.grid - 0.5
    uu, vv = np.meshgrid(u * target.sign_size, u * target.sign_size, indexing="ij")
    world_xy = center + uu.ravel()[:, None] * across
    local_xy = pose.to_local(world_xy)
    z = target.sign_height + vv.ravel()
    return np.column_stack((local_xy, z)) + noise
