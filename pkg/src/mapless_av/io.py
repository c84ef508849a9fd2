"""Debug and interchange formats: 8-bit PGM images and plain CSV."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import Waypoint
from .perception import BevRaster, PixelMask
from .tracker import LaneKalmanState, LaneMeasurement


def to_pgm(image: np.ndarray, lo: float | None = None, hi: float | None = None) -> bytes:
    """Binary (P5) 8-bit PGM; values are scaled from ``[lo, hi]`` and NaN maps to 0."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    finite = img[np.isfinite(img)]
    lo = float(finite.min()) if lo is None and finite.size else (0.0 if lo is None else lo)
    hi = float(finite.max()) if hi is None and finite.size else (1.0 if hi is None else hi)
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip((np.nan_to_num(img, nan=lo) - lo) / span, 0.0, 1.0)
    data = np.round(scaled * 255.0).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + data.tobytes()


def read_pgm(blob: bytes) -> np.ndarray:
    """Inverse of :func:`to_pgm` for the files it writes (returns uint8)."""
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    cols, rows = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=rows * cols).reshape(rows, cols)


def write_raster_pgm(path: str | Path, raster: BevRaster) -> None:
    Path(path).write_bytes(to_pgm(raster.intensity, 0.0, 1.0))


def write_mask_pgm(path: str | Path, mask: PixelMask) -> None:
    Path(path).write_bytes(to_pgm(mask.cells.astype(float), 0.0, 1.0))


def write_grid_pgm(path: str | Path, grid: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> None:
    Path(path).write_bytes(to_pgm(grid, lo, hi))


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Deterministic CSV (``repr`` floats, ``\\n`` line endings)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def write_grid_csv(path: str | Path, grid: np.ndarray) -> None:
    """Matrix CSV without header; unknown cells are written as ``nan``."""
    g = np.asarray(grid, dtype=float)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in g:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def write_points_csv(path: str | Path, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=float)
    header = ("x", "y", "z")[: pts.shape[1]] if pts.ndim == 2 else ("x", "y")
    write_csv(path, header, pts.reshape(-1, len(header)))


def read_points_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(rows[0]))


MEASUREMENT_HEADER = ("timestamp", "source", "a", "b", "c")


def write_measurements_csv(path: str | Path, stream: Iterable[LaneMeasurement]) -> None:
    write_csv(path, MEASUREMENT_HEADER, ((m.timestamp, m.source, *m.y) for m in stream))


def read_measurements_csv(path: str | Path) -> list[LaneMeasurement]:
    """Measurement stream; the header must be ``timestamp, source, a, b, c``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if tuple(header) != MEASUREMENT_HEADER:
            raise ValueError(f"{path}: expected header {','.join(MEASUREMENT_HEADER)}, got {','.join(header)}")
        out = []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                t, src, a, b, c = row
                out.append(LaneMeasurement(src.strip(), (float(a), float(b), float(c)), float(t)))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


STATE_HEADER = ("t", "a", "b", "c", "P_aa", "P_bb", "P_cc")


def write_states_csv(path: str | Path, states: Iterable[LaneKalmanState]) -> None:
    write_csv(path, STATE_HEADER, ((s.last_update_time, *s.x, *np.diag(s.P)) for s in states))


def write_waypoints_csv(path: str | Path, path_pts: Sequence[Waypoint]) -> None:
    write_csv(
        path,
        ("x", "y", "heading", "curvature", "speed"),
        ((w.position.x, w.position.y, w.position.heading, w.curvature, w.speed) for w in path_pts),
    )
