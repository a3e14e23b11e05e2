"""Rasterize spectrograms into the 64x64 RGB images the classifier consumes.

The full chain Spectrogram -> PNG bytes is a pure function: identical inputs
give byte-identical files.  Rendering never sees the class label, so images
cannot leak it.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ._palette import PALETTE
from .tfr import Spectrogram

__all__ = [
    "RGBImage",
    "to_db",
    "normalize01",
    "resize_bilinear",
    "apply_colormap",
    "encode_png",
    "decode_png",
    "render_spectrogram",
]

_PALETTE_ARR = np.asarray(PALETTE, dtype=np.float64)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class RGBImage:
    """8-bit RGB raster, row-major, top row = highest frequency."""

    pixels: np.ndarray  # (height, width, 3) uint8
    clamped: int = 0  # out-of-range input values clamped during colormapping

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError(f"pixels must be (h, w, 3) uint8, got {px.shape} {px.dtype}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def to_db(s: Spectrogram, floor_db: float = -80.0) -> np.ndarray:
    """Energy in dB relative to the grid maximum, clamped below at floor_db.

    An all-zero spectrogram maps to a uniform floor_db matrix.
    """
    if not floor_db < 0:
        raise ValueError(f"floor_db must be negative, got {floor_db}")
    e = s.energy
    peak = e.max()
    if peak <= 0:
        return np.full(e.shape, floor_db)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(e / peak)
    return np.maximum(db, floor_db)


def normalize01(m: np.ndarray) -> np.ndarray:
    """Affine map of [min, max] onto [0, 1]; a constant matrix maps to 0.5."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.full(m.shape, 0.5)
    return (m - lo) / (hi - lo)


def resize_bilinear(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resample with corner-aligned sampling."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dims must be >= 1, got {out_h}x{out_w}")
    m = np.asarray(m, dtype=np.float64)
    in_h, in_w = m.shape
    if in_h < 1 or in_w < 1:
        raise ValueError("input dims must be >= 1")

    def axis_coords(n_in, n_out):
        if n_in == 1:
            return np.zeros(n_out)
        return np.linspace(0.0, n_in - 1.0, n_out)

    ys = axis_coords(in_h, out_h)
    xs = axis_coords(in_w, out_w)
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    fy = ys - y0
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fx = xs - x0
    top = m[y0][:, x0] * (1 - fx) + m[y0][:, x1] * fx
    bot = m[y1][:, x0] * (1 - fx) + m[y1][:, x1] * fx
    return top * (1 - fy[:, None]) + bot * fy[:, None]


def apply_colormap(m: np.ndarray) -> RGBImage:
    """Map values in [0, 1] through the shipped 256-entry palette.

    Values between table entries are linearly interpolated; out-of-range
    inputs are clamped and counted in the image's ``clamped`` stat.
    """
    m = np.asarray(m, dtype=np.float64)
    clamped = int(np.count_nonzero((m < 0.0) | (m > 1.0)))
    v = np.clip(m, 0.0, 1.0) * 255.0
    lo = np.floor(v).astype(int)
    hi = np.minimum(lo + 1, 255)
    frac = (v - lo)[..., None]
    rgb = _PALETTE_ARR[lo] * (1 - frac) + _PALETTE_ARR[hi] * frac
    return RGBImage(pixels=(rgb + 0.5).astype(np.uint8), clamped=clamped)


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def encode_png(img: RGBImage) -> bytes:
    """Encode as an 8-bit truecolor PNG.

    Filter type 0 on every scanline and a fixed zlib level, so the bytes are
    deterministic for a given image.
    """
    h, w = img.height, img.width
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    raw = b"".join(b"\x00" + img.pixels[row].tobytes() for row in range(h))
    idat = zlib.compress(raw, 9)
    return (
        PNG_SIGNATURE
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", idat)
        + _png_chunk(b"IEND", b"")
    )


def decode_png(data: bytes) -> RGBImage:
    """Decode a PNG produced by :func:`encode_png` (truecolor, filter 0)."""
    if data[:8] != PNG_SIGNATURE:
        raise ValueError("not a PNG file")
    pos = 8
    w = h = None
    idat = b""
    while pos < len(data):
        (length,) = struct.unpack_from(">I", data, pos)
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            w, h, depth, color = struct.unpack_from(">IIBB", payload)
            if depth != 8 or color != 2:
                raise ValueError("only 8-bit truecolor PNGs are supported")
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    raw = zlib.decompress(idat)
    stride = 1 + 3 * w
    rows = []
    prev = np.zeros(3 * w, dtype=np.uint8)
    for row in range(h):
        line = raw[row * stride : (row + 1) * stride]
        ftype, body = line[0], np.frombuffer(line[1:], dtype=np.uint8)
        if ftype == 0:
            cur = body.copy()
        elif ftype == 1:  # Sub: per-channel prefix sum across the scanline
            cur = body.reshape(-1, 3).cumsum(axis=0).astype(np.uint8).ravel()
        elif ftype == 2:  # Up
            cur = (body + prev).astype(np.uint8)
        elif ftype == 3:  # Average
            cur = np.empty_like(body)
            for i in range(len(body)):
                left = int(cur[i - 3]) if i >= 3 else 0
                cur[i] = (int(body[i]) + ((left + int(prev[i])) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            cur = np.empty_like(body)
            for i in range(len(body)):
                a = int(cur[i - 3]) if i >= 3 else 0
                b = int(prev[i])
                c = int(prev[i - 3]) if i >= 3 else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                pred = a if pa <= pb and pa <= pc else (b if pb <= pc else c)
                cur[i] = (int(body[i]) + pred) & 0xFF
        else:
            raise ValueError(f"unsupported PNG filter type {ftype}")
        rows.append(cur)
        prev = cur
    pixels = np.stack(rows).reshape(h, w, 3)
    return RGBImage(pixels=pixels)


def render_spectrogram(
    s: Spectrogram,
    size: int = 64,
    floor_db: float = -80.0,
    freq_range_hz: tuple[float, float] | None = None,
) -> RGBImage:
    """Full rendering chain: dB scale, per-image min-max normalization,
    bilinear resize to ``size`` x ``size``, palette lookup.

    Per-image normalization deliberately removes absolute amplitude (and
    with it the load level) as a trivial shortcut feature.  ``freq_range_hz``
    optionally crops the band before rasterizing; default keeps 0..fs/2.
    The output's top row is the highest retained frequency.
    """
    energy = s.energy
    if freq_range_hz is not None:
        lo, hi = freq_range_hz
        keep = (s.freqs_hz >= lo) & (s.freqs_hz <= hi)
        if not keep.any():
            raise ValueError(f"freq_range_hz {freq_range_hz} selects no bins")
        energy = energy[:, keep]
        s = Spectrogram(
            energy=energy,
            times_s=s.times_s,
            freqs_hz=s.freqs_hz[keep],
            sample_rate_hz=s.sample_rate_hz,
            window_len=s.window_len,
            hop=s.hop,
        )
    db = to_db(s, floor_db)
    norm = normalize01(db)
    # rows = frequency (top = highest), columns = time
    heat = resize_bilinear(norm.T[::-1], size, size)
    return apply_colormap(heat)
