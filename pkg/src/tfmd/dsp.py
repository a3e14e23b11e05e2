"""Core DSP primitives: windows, signal framing, and Fourier transforms.

Everything in this module is a pure function on immutable inputs and is
safe to call from multiple threads.  The FFT is a radix-2 kernel restricted
to power-of-two sizes so it can be checked bin-for-bin against the naive
O(N^2) DFT oracle; callers pad to a power of two.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TimeSeries",
    "Window",
    "WindowKind",
    "FrameSet",
    "make_window",
    "frame_signal",
    "dft_naive",
    "fft",
    "energy",
    "save_timeseries",
    "load_timeseries",
]


@dataclass(frozen=True)
class TimeSeries:
    """A uniformly sampled real-valued signal (e.g. one motor phase current)."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must all be finite")
        if not (self.sample_rate_hz > 0):
            raise ValueError("sample_rate_hz must be positive")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


class WindowKind(enum.Enum):
    HANN = "hann"
    GAUSSIAN = "gaussian"
    RECTANGULAR = "rectangular"


@dataclass(frozen=True)
class Window:
    """Analysis window plus the auxiliary windows needed for reassignment.

    ``coefficients`` is w[n].  ``time_weighted`` is (n - c) * w[n] with
    c = (L-1)/2, and ``derivative`` is the analytic derivative of the window
    formula sampled at integer n (per-sample units).  The derivative is NOT a
    finite difference: reassignment-operator accuracy depends on it being
    exact.
    """

    kind: WindowKind
    coefficients: np.ndarray
    derivative: np.ndarray
    time_weighted: np.ndarray

    def __len__(self):
        return self.coefficients.size

    @property
    def center(self) -> float:
        """Window center in sample offsets: (L-1)/2."""
        return (len(self) - 1) / 2.0


def make_window(kind: WindowKind, length: int) -> Window:
    """Build a window of the given kind with its derivative and time-weighted
    companions.

    Hann: w[n] = 0.5 - 0.5*cos(2*pi*n/(L-1)).
    Gaussian: w[n] = exp(-((n-c)/sigma)^2 / 2) with sigma = L/6, c = (L-1)/2.
    """
    if length < 2:
        raise ValueError(f"window length must be >= 2, got {length}")
    n = np.arange(length, dtype=np.float64)
    c = (length - 1) / 2.0
    if kind is WindowKind.HANN:
        arg = 2.0 * np.pi * n / (length - 1)
        w = 0.5 - 0.5 * np.cos(arg)
        dw = 0.5 * (2.0 * np.pi / (length - 1)) * np.sin(arg)
    elif kind is WindowKind.GAUSSIAN:
        sigma = length / 6.0
        z = (n - c) / sigma
        w = np.exp(-0.5 * z * z)
        dw = -(z / sigma) * w
    elif kind is WindowKind.RECTANGULAR:
        w = np.ones(length)
        dw = np.zeros(length)
    else:
        raise ValueError(f"unknown window kind: {kind!r}")
    tw = (n - c) * w
    return Window(kind=kind, coefficients=w, derivative=dw, time_weighted=tw)


@dataclass(frozen=True)
class FrameSet:
    """Sliding frames of a signal; frame m covers samples [m*hop, m*hop + L)."""

    frames: np.ndarray  # (n_frames, L)
    hop: int
    frame_centers: np.ndarray  # fractional sample index of each window center

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def frame_signal(ts: TimeSeries, window_len: int, hop: int) -> FrameSet:
    """Slice a signal into hop-spaced frames of length ``window_len``.

    Tail frames reaching past the end of the signal are zero-padded, so
    n_frames = floor((len-1)/hop) + 1 depends only on (len, hop).
    """
    if window_len < 2:
        raise ValueError(f"window_len must be >= 2, got {window_len}")
    if hop < 1 or hop > window_len:
        raise ValueError(f"hop must be in [1, window_len], got {hop}")
    x = ts.samples
    n = x.size
    n_frames = (n - 1) // hop + 1
    padded = np.concatenate([x, np.zeros(window_len)])
    starts = np.arange(n_frames) * hop
    frames = np.stack([padded[s : s + window_len] for s in starts])
    centers = starts + (window_len - 1) / 2.0
    return FrameSet(frames=frames, hop=hop, frame_centers=centers)


def dft_naive(frame) -> np.ndarray:
    """Direct O(N^2) DFT: X[k] = sum_n x[n] exp(-2j*pi*k*n/N).

    Test oracle only; any length is accepted.
    """
    x = np.asarray(frame, dtype=np.complex128)
    n = x.size
    k = np.arange(n)
    kernel = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return kernel @ x


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft(x, axis: int = -1) -> np.ndarray:
    """Iterative radix-2 FFT over ``axis``.  Length must be a power of two.

    Same contract as :func:`dft_naive`; works on batches of frames.
    """
    a = np.asarray(x, dtype=np.complex128)
    n = a.shape[axis]
    if n == 0 or (n & (n - 1)) != 0:
        raise ValueError(f"FFT length must be a power of two, got {n}")
    a = np.moveaxis(a, axis, -1).copy()
    if n > 1:
        a = a[..., _bit_reverse_indices(n)]
        half = 1
        while half < n:
            step = half * 2
            tw = np.exp(-1j * np.pi * np.arange(half) / half)
            b = a.reshape(a.shape[:-1] + (n // step, step))
            even = b[..., :half].copy()
            odd = b[..., half:] * tw
            b[..., :half] = even + odd
            b[..., half:] = even - odd
            half = step
    return np.moveaxis(a, -1, axis)


def energy(ts: TimeSeries) -> float:
    """Total signal energy, sum of squared samples."""
    return float(np.sum(ts.samples**2))


# ---------------------------------------------------------------------------
# Raw-float file format: little-endian float32 samples + JSON sidecar.
# ---------------------------------------------------------------------------


def save_timeseries(ts: TimeSeries, path, **meta) -> None:
    """Write ``path`` as raw little-endian float32 plus a ``path + '.json'``
    sidecar carrying the sample rate and any extra metadata (label, load,
    seed, ...)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(ts.samples.astype("<f4").tobytes())
    sidecar = {"sample_rate_hz": ts.sample_rate_hz, "n_samples": len(ts)}
    sidecar.update(meta)
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True))


def load_timeseries(path) -> tuple[TimeSeries, dict]:
    """Read a signal written by :func:`save_timeseries`; returns (ts, meta)."""
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    samples = np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64)
    if samples.size != meta["n_samples"]:
        raise ValueError(
            f"{path}: sidecar says {meta['n_samples']} samples, file has {samples.size}"
        )
    return TimeSeries(samples=samples, sample_rate_hz=meta["sample_rate_hz"]), meta
