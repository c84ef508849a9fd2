from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapless_av.tracker import (
    TICK,
    LaneKalmanState,
    LaneMeasurement,
    LaneTracker,
    NoiseModel,
    OutOfOrderError,
    UnknownSourceError,
    ingest,
    order_stream,
    predict,
    update,
)

I3 = np.eye(3)


def noise(R=np.zeros((3, 3)), omega=None) -> NoiseModel:
    return NoiseModel(R, omega or {"steerable": I3.copy(), "lidar": I3.copy()})


# -- predict -----------------------------------------------------------------
def test_predict_adds_R():
    s = predict(LaneKalmanState(np.zeros(3), np.zeros((3, 3))), noise(R=I3))
    np.testing.assert_array_equal(s.P, I3)


def test_predict_keeps_estimate():
    s0 = LaneKalmanState([0.01, 0.0, 1.5], I3)
    np.testing.assert_array_equal(predict(s0, NoiseModel()).x, [0.01, 0.0, 1.5])


def test_repeated_predict_is_k_times_R():
    R = np.diag([0.5, 0.25, 2.0])
    s = LaneKalmanState(np.zeros(3), np.zeros((3, 3)))
    for _ in range(7):
        s = predict(s, noise(R=R))
    np.testing.assert_array_equal(s.P, 7 * R)


# -- update ------------------------------------------------------------------
def test_tiny_omega_returns_measurement():
    nm = noise(omega={"steerable": 1e-12 * I3})
    s = update(LaneKalmanState(np.zeros(3), I3), LaneMeasurement("steerable", [0.02, -0.1, 0.7], 0.0), nm)
    np.testing.assert_allclose(s.x, [0.02, -0.1, 0.7], atol=1e-9)


def test_huge_omega_leaves_estimate():
    nm = noise(omega={"steerable": 1e12 * I3})
    s = update(LaneKalmanState([0.01, 0.1, 0.3], I3), LaneMeasurement("steerable", [5, 5, 5], 0.0), nm)
    np.testing.assert_allclose(s.x, [0.01, 0.1, 0.3], atol=1e-9)


def test_scalar_gain_half():
    s = update(LaneKalmanState(np.zeros(3), I3), LaneMeasurement("steerable", [2, 2, 2], 0.0), noise())
    np.testing.assert_allclose(s.x, [1, 1, 1])
    np.testing.assert_allclose(s.P, 0.5 * I3)


def test_unknown_source():
    with pytest.raises(UnknownSourceError):
        update(LaneKalmanState(np.zeros(3), I3), LaneMeasurement("radar", [0, 0, 0], 0.0), noise())


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError):
        NoiseModel(omega={"steerable": np.diag([1.0, 0.0, 1.0])})


def test_measurement_timestamp_finite():
    with pytest.raises(ValueError):
        LaneMeasurement("steerable", [0, 0, 0], float("inf"))


# -- ingest ------------------------------------------------------------------
def test_empty_stream_returns_initial_state():
    s0 = LaneKalmanState.initial()
    out = ingest(s0, [], NoiseModel())
    assert out == [s0]


def test_constant_measurement_converges_to_riccati_fixed_point():
    r = np.array([1e-4, 1e-3, 1e-2])
    w = np.array([1e-2, 1e-1, 1.0])
    nm = NoiseModel(np.diag(r), {"steerable": np.diag(w)})
    y = np.array([0.02, -0.3, 1.1])
    stream = [LaneMeasurement("steerable", y, k * TICK) for k in range(1, 3001)]
    states = ingest(LaneKalmanState.initial(), stream, nm)
    p = np.zeros(3)
    for _ in range(100000):
        p = (p + r) * w / ((p + r) + w)
    np.testing.assert_allclose(states[-1].x, y, atol=1e-6)
    np.testing.assert_allclose(np.diag(states[-1].P), p, rtol=1e-9)


def test_interleaving_order_irrelevant_and_matches_batch_mean():
    rng = np.random.default_rng(7)
    n = 40
    ys = rng.normal(size=(2 * n, 3))
    nm = noise()
    s0 = LaneKalmanState(np.zeros(3), 1e9 * I3)
    ab, ba = [], []
    for k in range(n):
        t = (k + 1) * TICK
        m_s = LaneMeasurement("steerable", ys[2 * k], t)
        m_l = LaneMeasurement("lidar", ys[2 * k + 1], t)
        ab += [m_s, m_l]
        ba += [m_l, m_s]
    out_ab = ingest(s0, ab, nm)[-1]
    out_ba = ingest(s0, ba, nm)[-1]
    assert out_ab.x.tolist() == out_ba.x.tolist()
    # with no process noise and a diffuse prior the filter is the batch average
    np.testing.assert_allclose(out_ab.x, ys.mean(axis=0), atol=1e-6)


def test_same_tick_priority_order():
    t = 5 * TICK
    stream = [LaneMeasurement("cnn-slot", [0, 0, 0], t), LaneMeasurement("lidar", [0, 0, 0], t),
              LaneMeasurement("steerable", [0, 0, 0], t)]
    assert [m.source for m in order_stream(stream)] == ["steerable", "lidar", "cnn-slot"]


def test_out_of_order_stream_rejected():
    stream = [LaneMeasurement("steerable", [0, 0, 0], 1.0), LaneMeasurement("steerable", [0, 0, 0], 0.5)]
    with pytest.raises(OutOfOrderError):
        ingest(LaneKalmanState.initial(), stream, NoiseModel())


def test_tracker_rejects_stale_measurement():
    tr = LaneTracker(LaneKalmanState.initial(), NoiseModel())
    tr.ingest(LaneMeasurement("steerable", [0, 0, 0], 1.0))
    with pytest.raises(OutOfOrderError):
        tr.ingest(LaneMeasurement("lidar", [0, 0, 0], 0.5))


def test_predicts_once_per_elapsed_tick():
    R = np.diag([1.0, 2.0, 3.0])
    tr = LaneTracker(LaneKalmanState(np.zeros(3), np.zeros((3, 3))), NoiseModel(R))
    tr.advance_to(4 * TICK)
    np.testing.assert_allclose(tr.state.P, 4 * R)


def test_shift_lateral_moves_offset_only():
    tr = LaneTracker(LaneKalmanState([0.01, 0.1, 0.2], I3), NoiseModel())
    tr.shift_lateral(-3.0)
    np.testing.assert_allclose(tr.state.x, [0.01, 0.1, -2.8])


def test_bounded_clips_curvature():
    s = LaneKalmanState([0.5, 0.0, 0.0], I3)
    assert s.estimate.a == 0.1
    assert s.bounded(0.2).a == 0.2


def test_determinism():
    rng = np.random.default_rng(1)
    stream = [LaneMeasurement(("steerable", "lidar")[k % 2], rng.normal(size=3), k * 0.03) for k in range(200)]
    a = ingest(LaneKalmanState.initial(), stream, NoiseModel())
    b = ingest(LaneKalmanState.initial(), stream, NoiseModel())
    assert all(np.array_equal(x.x, y.x) and np.array_equal(x.P, y.P) for x, y in zip(a, b))


# -- covariance properties ---------------------------------------------------
step = st.tuples(st.sampled_from(["predict", "steerable", "lidar"]), st.lists(st.floats(-3, 3), min_size=3, max_size=3))
diag = st.lists(st.floats(1e-6, 10.0), min_size=3, max_size=3)


@settings(max_examples=80, deadline=None)
@given(st.lists(step, max_size=30), diag, diag, diag)
def test_covariance_stays_symmetric_psd(ops, r, w1, w2):
    nm = NoiseModel(np.diag(r), {"steerable": np.diag(w1), "lidar": np.diag(w2)})
    s = LaneKalmanState.initial()
    for kind, y in ops:
        s = predict(s, nm) if kind == "predict" else update(s, LaneMeasurement(kind, y, 0.0), nm)
        assert np.allclose(s.P, s.P.T, atol=1e-12)
        assert np.linalg.eigvalsh(s.P).min() >= -1e-9


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(1e-4, 10.0), min_size=3, max_size=3), diag, st.floats(-1, 1))
def test_update_never_increases_variance(p_diag, w, rho):
    P = np.diag(p_diag)
    # add a valid off-diagonal term
    P[0, 1] = P[1, 0] = 0.9 * rho * np.sqrt(P[0, 0] * P[1, 1])
    nm = NoiseModel(np.zeros((3, 3)), {"steerable": np.diag(w)})
    post = update(LaneKalmanState(np.zeros(3), P), LaneMeasurement("steerable", [1, 1, 1], 0.0), nm)
    assert np.all(np.diag(post.P) <= np.diag(P) + 1e-12)
