import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcgauth.preprocess import (
    ExtrapolationError,
    NoOverlapError,
    TooShortError,
    UniformStream,
    align,
    resample_uniform,
    truncate_overlap,
)
from bcgauth.sensor_model import RawStream, Recording, SensorKind

A, G = SensorKind.ACCELEROMETER, SensorKind.GYROSCOPE


def raw(kind, ts, vals=None):
    ts = np.asarray(ts, dtype=np.int64)
    if vals is None:
        vals = np.stack([ts * 1.0, -ts * 0.5, np.ones(len(ts))], axis=1)
    return RawStream(kind, ts, vals)


def test_truncate_interval_intersection():
    a = raw(A, np.arange(0, 1001, 20))
    g = raw(G, np.arange(40, 1041, 20))
    ta, tg = truncate_overlap(a, g)
    assert ta.timestamps[0] == tg.timestamps[0] == 40
    assert ta.timestamps[-1] == tg.timestamps[-1] == 1000


def test_truncate_identity_and_disjoint():
    a = raw(A, [0, 20, 40])
    g = raw(G, [0, 20, 40])
    ta, tg = truncate_overlap(a, g)
    assert ta == a and tg == g
    with pytest.raises(NoOverlapError):
        truncate_overlap(raw(A, [0, 500]), raw(G, [600, 700]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=2, max_size=60),
       st.lists(st.integers(1, 30), min_size=2, max_size=60), st.integers(0, 200))
def test_truncate_is_tight(da, dg, off):
    a = raw(A, np.cumsum(da))
    g = raw(G, off + np.cumsum(dg))
    lo, hi = max(a.timestamps[0], g.timestamps[0]), min(a.timestamps[-1], g.timestamps[-1])
    if hi < lo:
        with pytest.raises(NoOverlapError):
            truncate_overlap(a, g)
        return
    for orig, cut in zip((a, g), truncate_overlap(a, g)):
        inside = (orig.timestamps >= lo) & (orig.timestamps <= hi)
        assert np.array_equal(cut.timestamps, orig.timestamps[inside])


def test_resample_midpoint_and_knots():
    s = raw(A, [0, 20], [[0, 0, 0], [2, 4, 6]])
    u = resample_uniform(s, 10, 1)
    assert u.channels[:, 0].tolist() == [1.0, 2.0, 3.0]
    s = raw(A, np.arange(0, 200, 20), np.random.default_rng(0).normal(size=(10, 3)))
    u = resample_uniform(s, 0, 10)
    assert np.array_equal(u.channels, s.values.T)
    assert np.all(np.diff(u.timestamps) == 20)


def test_resample_extrapolation():
    s = raw(A, [10, 30, 50])
    with pytest.raises(ExtrapolationError):
        resample_uniform(s, 0, 2)
    with pytest.raises(ExtrapolationError):
        resample_uniform(s, 10, 4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(5, 20), min_size=10, max_size=300), st.floats(-5, 5), st.floats(-100, 100))
def test_resample_reproduces_affine_signal(gaps, slope, icpt):
    ts = np.concatenate([[0], np.cumsum(gaps)])
    vals = np.stack([slope * ts + icpt, ts * 1.0, -3.0 * ts], axis=1)
    n = int(ts[-1]) // 20 + 1
    u = resample_uniform(RawStream(A, ts, vals), 0, n)
    grid = u.timestamps
    np.testing.assert_allclose(u.channels[1], grid, rtol=0, atol=1e-9)
    np.testing.assert_allclose(u.channels[0], slope * grid + icpt, rtol=0, atol=1e-9)


def test_align_on_identical_grid_is_identity():
    ts = np.arange(0, 2000, 20)
    rng = np.random.default_rng(1)
    a = raw(A, ts, rng.normal(size=(len(ts), 3)))
    g = raw(G, ts, rng.normal(size=(len(ts), 3)))
    pair = align(Recording("s", "1", a, g))
    assert np.array_equal(pair.accel.channels, a.values.T)
    assert np.array_equal(pair.gyro.channels, g.values.T)
    # re-aligning an aligned pair changes nothing
    again = align(Recording("s", "1", pair.accel.to_raw(A), pair.gyro.to_raw(G)))
    assert again.accel == pair.accel and again.gyro == pair.gyro


def test_align_shares_start_and_length():
    rng = np.random.default_rng(2)
    a = raw(A, np.cumsum(rng.integers(5, 21, size=500)))
    g = raw(G, 7 + np.cumsum(rng.integers(5, 21, size=480)))
    pair = align(Recording("s", "1", a, g))
    assert pair.accel.start_ms == pair.gyro.start_ms == max(a.timestamps[0], g.timestamps[0])
    assert len(pair.accel) == len(pair.gyro)
    end = pair.accel.timestamps[-1]
    assert end <= min(a.timestamps[-1], g.timestamps[-1]) < end + 20


def test_align_too_short_overlap():
    with pytest.raises(TooShortError):
        align(Recording("s", "1", raw(A, [0, 15]), raw(G, [0, 15])))


def test_uniform_stream_shape_check():
    with pytest.raises(ValueError):
        UniformStream(0, np.zeros((2, 10)))
