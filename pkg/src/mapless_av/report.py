"""Report bundle: metrics, step log and plot-ready CSVs for one run."""

from __future__ import annotations

import math
import os
import shutil
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .io import write_csv
from .simulation import STEP_COLUMNS, RunMetrics, StepRecord, lateral_errors
from .track import TrackDefinition

BUNDLE_FILES = (
    "metrics.txt",
    "steps.csv",
    "error_vs_index.csv",
    "velocity_vs_distance.csv",
    "path_overlay.csv",
)


def _value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def format_metrics(metrics: RunMetrics, extra: dict | None = None) -> str:
    """Flat ``key = value`` lines in a fixed order."""
    items = dict(metrics.as_dict())
    if extra:
        items.update(extra)
    return "".join(f"{k} = {_value(v)}\n" for k, v in items.items())


def write_bundle(
    out_dir: str | Path,
    metrics: RunMetrics,
    log: Sequence[StepRecord],
    track: TrackDefinition,
    extra: dict | None = None,
) -> Path:
    """Write all bundle files; the directory is populated atomically (temp dir, then rename)."""
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        (tmp / "metrics.txt").write_text(format_metrics(metrics, extra))
        write_csv(tmp / "steps.csv", STEP_COLUMNS, (r.row() for r in log))
        if log:
            err, s = lateral_errors(list(log), track)
            turn = track.is_turn(s)
        else:
            err, s, turn = np.empty(0), np.empty(0), np.empty(0, dtype=bool)
        write_csv(
            tmp / "error_vs_index.csv",
            ("index", "s", "lateral_error", "segment"),
            ((i, s[i], err[i], "turn" if turn[i] else "straight") for i in range(len(err))),
        )
        write_csv(
            tmp / "velocity_vs_distance.csv",
            ("distance", "v", "v_ref", "fsm_state"),
            ((r.travelled, r.v, r.v_ref, r.fsm_state) for r in log),
        )
        step = max(1, int(round(0.25 / (track.s[1] - track.s[0]))))
        rows = []
        for lane in range(track.lanes):
            for x, y in track.lane_points(track.s[::step], lane):
                rows.append((f"lane{lane}", x, y))
        rows.extend(("vehicle", r.x, r.y) for r in log)
        write_csv(tmp / "path_overlay.csv", ("series", "x", "y"), rows)
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out
