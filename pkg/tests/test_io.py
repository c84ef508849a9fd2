from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mapless_av.io import (
    read_measurements_csv,
    read_pgm,
    read_points_csv,
    to_pgm,
    write_csv,
    write_measurements_csv,
    write_points_csv,
)
from mapless_av.report import BUNDLE_FILES, format_metrics, write_bundle
from mapless_av.simulation import RunMetrics, StepRecord
from mapless_av.tracker import LaneMeasurement
from mapless_av.track import straight_track


# -- PGM ---------------------------------------------------------------------
def test_pgm_header_and_scaling():
    blob = to_pgm(np.array([[0.0, 0.5, 1.0]]), 0.0, 1.0)
    assert blob.startswith(b"P5\n3 1\n255\n")
    assert read_pgm(blob).tolist() == [[0, 128, 255]]


def test_pgm_nan_maps_to_black():
    assert read_pgm(to_pgm(np.array([[np.nan, 1.0]]), 0.0, 1.0)).tolist() == [[0, 255]]


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_pgm_round_trip_of_bytes(img):
    np.testing.assert_array_equal(read_pgm(to_pgm(img.astype(float), 0.0, 255.0)), img)


def test_pgm_rejects_non_2d():
    with pytest.raises(ValueError):
        to_pgm(np.zeros(4))
    with pytest.raises(ValueError):
        read_pgm(b"P2\n1 1\n255\n0")


# -- CSV ---------------------------------------------------------------------
def test_points_round_trip_is_exact(tmp_path):
    pts = np.random.default_rng(0).normal(size=(50, 3))
    write_points_csv(tmp_path / "p.csv", pts)
    np.testing.assert_array_equal(read_points_csv(tmp_path / "p.csv"), pts)


def test_measurements_round_trip(tmp_path):
    stream = [
        LaneMeasurement("steerable", (0.01, -0.02, 0.3), 0.0),
        LaneMeasurement("lidar", (0.0, 0.1, -0.25), 0.1),
    ]
    write_measurements_csv(tmp_path / "m.csv", stream)
    back = read_measurements_csv(tmp_path / "m.csv")
    assert [(m.source, m.timestamp) for m in back] == [("steerable", 0.0), ("lidar", 0.1)]
    for a, b in zip(stream, back):
        np.testing.assert_array_equal(a.y, b.y)


def test_measurements_bad_header(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("t,src,a,b,c\n0,lidar,0,0,0\n")
    with pytest.raises(ValueError, match="expected header"):
        read_measurements_csv(p)


def test_measurements_bad_row_reports_line(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("timestamp,source,a,b,c\n0,lidar,0,0,0\n0.1,lidar,zero,0,0\n")
    with pytest.raises(ValueError, match=r"m\.csv:3"):
        read_measurements_csv(p)


def test_csv_is_deterministic(tmp_path):
    rows = [(0.1, 1, "a"), (1e-17, 2, "b")]
    write_csv(tmp_path / "a.csv", ("x", "n", "s"), rows)
    write_csv(tmp_path / "b.csv", ("x", "n", "s"), rows)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[1:] == ["0.1,1,a", "1e-17,2,b"]


# -- report ------------------------------------------------------------------
def test_format_metrics_fixed_keys():
    text = format_metrics(RunMetrics(rms_lateral=0.1, stop_errors=[0.05, -0.1], completed=True))
    lines = dict(line.split(" = ", 1) for line in text.splitlines())
    assert lines["rms_lateral"] == "0.1"
    assert lines["max_lateral"] == "nan"
    assert lines["stop_count"] == "2" and lines["stop_errors"] == "0.05;-0.1"
    assert lines["completed"] == "true" and lines["failed"] == "false"


def test_write_bundle_with_empty_log(tmp_path):
    out = write_bundle(tmp_path / "b", RunMetrics(failed=True), [], straight_track(20.0))
    assert sorted(p.name for p in out.iterdir()) == sorted(BUNDLE_FILES)
    with open(out / "error_vs_index.csv") as fh:
        assert list(csv.reader(fh)) == [["index", "s", "lateral_error", "segment"]]


def test_write_bundle_error_column(tmp_path):
    log = [StepRecord(0.1 * i, 5.0 + i, 0.2, 0.0, 2.5, 0.0, 0.0, 0.0, 0.0, "lane_keeping", 0.0, 0.0, 0.0, v_ref=2.5)
           for i in range(5)]
    out = write_bundle(tmp_path / "b", RunMetrics(), log, straight_track(20.0))
    with open(out / "error_vs_index.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert all(abs(abs(float(r["lateral_error"])) - 0.2) < 1e-9 and r["segment"] == "straight" for r in rows)
