"""dsp-core: windows, framing, FFT vs naive-DFT oracle, signal I/O."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tfmd.dsp import (
    TimeSeries,
    Window,
    WindowKind,
    dft_naive,
    energy,
    fft,
    frame_signal,
    load_timeseries,
    make_window,
    save_timeseries,
)


# ---------------------------------------------------------------------------
# TimeSeries
# ---------------------------------------------------------------------------


def test_timeseries_validation():
    with pytest.raises(ValueError):
        TimeSeries(samples=np.array([]), sample_rate_hz=1.0)
    with pytest.raises(ValueError):
        TimeSeries(samples=np.array([1.0]), sample_rate_hz=0.0)
    with pytest.raises(ValueError):
        TimeSeries(samples=np.array([np.nan]), sample_rate_hz=1.0)


def test_timeseries_basic():
    ts = TimeSeries(samples=np.arange(10.0), sample_rate_hz=10.0)
    assert len(ts) == 10
    assert ts.duration_s == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------


def test_hann_4_by_hand():
    # 0.5 - 0.5*cos(2*pi*n/3) evaluated by hand
    w = make_window(WindowKind.HANN, 4)
    np.testing.assert_allclose(w.coefficients, [0.0, 0.75, 0.75, 0.0], atol=1e-12)


def test_rectangular_window():
    w = make_window(WindowKind.RECTANGULAR, 8)
    np.testing.assert_array_equal(w.coefficients, np.ones(8))
    np.testing.assert_array_equal(w.derivative, np.zeros(8))


@pytest.mark.parametrize("kind", list(WindowKind))
@pytest.mark.parametrize("length", [2, 5, 64, 1023, 1024])
def test_window_invariants(kind, length):
    w = make_window(kind, length)
    c = (length - 1) / 2.0
    n = np.arange(length)
    # symmetry about the center
    np.testing.assert_allclose(w.coefficients, w.coefficients[::-1], atol=1e-12)
    # tw[n] = (n - c) * w[n] exactly
    np.testing.assert_array_equal(w.time_weighted, (n - c) * w.coefficients)
    # tw antisymmetric about the center
    np.testing.assert_allclose(w.time_weighted, -w.time_weighted[::-1], atol=1e-9)
    assert w.center == c


def test_hann_endpoints_zero():
    for length in (4, 17, 1024):
        w = make_window(WindowKind.HANN, length)
        assert w.coefficients[0] == 0.0
        assert w.coefficients[-1] == 0.0


@pytest.mark.parametrize("kind", [WindowKind.HANN, WindowKind.GAUSSIAN])
def test_window_derivative_is_analytic(kind):
    """dw must match the window formula's derivative, not a finite
    difference: compare against a very fine central difference of the
    continuous formula."""
    length = 257
    w = make_window(kind, length)
    h = 1e-6

    def formula(x):
        if kind is WindowKind.HANN:
            return 0.5 - 0.5 * np.cos(2 * np.pi * x / (length - 1))
        c = (length - 1) / 2.0
        sigma = length / 6.0
        return np.exp(-0.5 * ((x - c) / sigma) ** 2)

    n = np.arange(length, dtype=float)
    approx = (formula(n + h) - formula(n - h)) / (2 * h)
    np.testing.assert_allclose(w.derivative, approx, atol=1e-8)


def test_window_length_validation():
    with pytest.raises(ValueError):
        make_window(WindowKind.HANN, 1)


# ---------------------------------------------------------------------------
# Framing
# ---------------------------------------------------------------------------


def test_frame_signal_nonoverlap():
    ts = TimeSeries(samples=np.arange(8.0), sample_rate_hz=1.0)
    fs = frame_signal(ts, 4, 4)
    assert fs.n_frames == 2
    np.testing.assert_array_equal(fs.frame_centers, [1.5, 5.5])
    np.testing.assert_array_equal(fs.frames[0], [0, 1, 2, 3])
    np.testing.assert_array_equal(fs.frames[1], [4, 5, 6, 7])


def test_frame_signal_overlap_tail_padding():
    # len=8, L=4, hop=2: frames start at 0,2,4,6; the last covers 6..10 and
    # pads two zeros
    ts = TimeSeries(samples=np.arange(1.0, 9.0), sample_rate_hz=1.0)
    fs = frame_signal(ts, 4, 2)
    assert fs.n_frames == 4
    np.testing.assert_array_equal(fs.frames[-1], [7, 8, 0, 0])


def test_frame_signal_identity():
    ts = TimeSeries(samples=np.arange(4.0), sample_rate_hz=1.0)
    fs = frame_signal(ts, 4, 4)
    assert fs.n_frames == 1
    np.testing.assert_array_equal(fs.frames[0], ts.samples)


def test_frame_signal_round_trip():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(100)
    ts = TimeSeries(samples=x, sample_rate_hz=1.0)
    fs = frame_signal(ts, 8, 8)
    np.testing.assert_array_equal(fs.frames.ravel()[: len(x)], x)


def test_frame_signal_validation():
    ts = TimeSeries(samples=np.arange(8.0), sample_rate_hz=1.0)
    with pytest.raises(ValueError):
        frame_signal(ts, 4, 0)
    with pytest.raises(ValueError):
        frame_signal(ts, 4, 5)  # hop > window_len


# ---------------------------------------------------------------------------
# DFT / FFT
# ---------------------------------------------------------------------------


def test_dft_naive_impulse():
    np.testing.assert_allclose(dft_naive([1, 0, 0, 0]), np.ones(4), atol=1e-12)


def test_dft_naive_dc():
    np.testing.assert_allclose(dft_naive([1, 1, 1, 1]), [4, 0, 0, 0], atol=1e-12)


def test_dft_naive_cosine():
    n = np.arange(8)
    x = np.cos(2 * np.pi * n / 8)
    spec = dft_naive(x)
    expected = np.zeros(8, dtype=complex)
    expected[1] = expected[7] = 4.0
    np.testing.assert_allclose(spec, expected, atol=1e-12)


def test_fft_zeros():
    np.testing.assert_array_equal(fft(np.zeros(16)), np.zeros(16, dtype=complex))


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        fft(np.zeros(12))


@pytest.mark.parametrize("n", [8, 16, 32, 64, 128, 256, 512, 1024])
def test_fft_matches_naive_dft(n):
    rng = np.random.default_rng(n)
    for _ in range(10):
        x = rng.standard_normal(n)
        assert np.max(np.abs(fft(x) - dft_naive(x))) < 1e-9


def test_fft_complex_input_matches_naive():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    np.testing.assert_allclose(fft(x), dft_naive(x), atol=1e-9)


def test_fft_batch_axis():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 32))
    batched = fft(x, axis=-1)
    for i in range(5):
        np.testing.assert_allclose(batched[i], fft(x[i]), atol=1e-12)


@given(
    st.integers(min_value=3, max_value=8),
    st.integers(min_value=0, max_value=2**32 - 1),
)
@settings(max_examples=40, deadline=None)
def test_fft_linearity(log_n, seed):
    n = 2**log_n
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    y = rng.standard_normal(n)
    a, b = rng.standard_normal(2)
    lhs = fft(a * x + b * y)
    rhs = a * fft(x) + b * fft(y)
    assert np.max(np.abs(lhs - rhs)) < 1e-9


@given(
    st.integers(min_value=3, max_value=10),
    st.integers(min_value=0, max_value=2**32 - 1),
)
@settings(max_examples=40, deadline=None)
def test_fft_parseval(log_n, seed):
    n = 2**log_n
    x = np.random.default_rng(seed).standard_normal(n)
    spec = fft(x)
    lhs = np.sum(x**2)
    rhs = np.sum(np.abs(spec) ** 2) / n
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


# ---------------------------------------------------------------------------
# energy and I/O
# ---------------------------------------------------------------------------


def test_energy():
    assert energy(TimeSeries(samples=np.zeros(4), sample_rate_hz=1.0)) == 0.0
    assert energy(TimeSeries(samples=np.array([3.0, 4.0]), sample_rate_hz=1.0)) == 25.0
    impulse = np.zeros(16)
    impulse[3] = 1.0
    assert energy(TimeSeries(samples=impulse, sample_rate_hz=1.0)) == 1.0


def test_timeseries_io_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    ts = TimeSeries(samples=rng.standard_normal(100), sample_rate_hz=10_000.0)
    path = tmp_path / "sig.f32"
    save_timeseries(ts, path, label=3, load=50, seed=42)
    back, meta = load_timeseries(path)
    assert back.sample_rate_hz == ts.sample_rate_hz
    assert meta["label"] == 3 and meta["load"] == 50 and meta["seed"] == 42
    assert meta["n_samples"] == 100
    # stored as float32, so round-trip at float32 precision
    np.testing.assert_allclose(back.samples, ts.samples, atol=1e-6)


def test_timeseries_file_is_raw_float32_le(tmp_path):
    ts = TimeSeries(samples=np.array([1.0, -2.0, 0.5]), sample_rate_hz=1.0)
    path = tmp_path / "sig.f32"
    save_timeseries(ts, path)
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    np.testing.assert_array_equal(raw, np.array([1.0, -2.0, 0.5], dtype="<f4"))
