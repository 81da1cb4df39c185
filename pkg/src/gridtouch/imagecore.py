"""Image containers, PNG/PPM file IO, resampling, and channel statistics.

Every raster is a float64 numpy array shaped (height, width, channels) with
samples in [0, 1].  8-bit files map to the canonical range by v / 255 on load
and round(v * 255) on save, so a load/save round trip moves each sample by at
most one quantization step (1/255).
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage


class ImageError(ValueError):
    """Malformed, unsupported, or inconsistent image data."""


@dataclass(frozen=True)
class Image:
    """H x W x C raster, C in {1, 3}, float64 samples in [0, 1]."""

    arr: np.ndarray

    def __post_init__(self):
        a = self.arr
        if not isinstance(a, np.ndarray) or a.ndim != 3:
            raise ImageError("image array must be shaped (height, width, channels)")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ImageError("image must contain at least one pixel")
        if a.shape[2] not in (1, 3):
            raise ImageError(f"unsupported channel count {a.shape[2]}")
        if a.dtype != np.float64:
            raise ImageError("image array must be float64")
        if not np.isfinite(a).all():
            raise ImageError("image samples must be finite")
        if float(a.min()) < 0.0 or float(a.max()) > 1.0:
            raise ImageError("image samples must lie in [0, 1]")

    @staticmethod
    def from_array(arr, channels: int | None = None) -> "Image":
        """Build an Image from any array-like, clamping samples into [0, 1].

        2-D input becomes a single-channel image.  Non-finite samples are
        rejected rather than clamped.
        """
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if not np.isfinite(a).all():
            raise ImageError("image samples must be finite")
        a = np.clip(a, 0.0, 1.0)
        if channels is not None and a.shape[2] != channels:
            raise ImageError(f"expected {channels} channels, got {a.shape[2]}")
        return Image(a.copy())

    @property
    def width(self) -> int:
        return self.arr.shape[1]

    @property
    def height(self) -> int:
        return self.arr.shape[0]

    @property
    def channels(self) -> int:
        return self.arr.shape[2]

    def channel(self, i: int) -> np.ndarray:
        return self.arr[:, :, i]


@dataclass(frozen=True)
class XyzImage:
    """CIE-1931 tristimulus raster; all samples nonnegative and finite."""

    arr: np.ndarray  # (h, w, 3)

    def __post_init__(self):
        a = self.arr
        if a.ndim != 3 or a.shape[2] != 3:
            raise ImageError("XYZ array must be shaped (height, width, 3)")
        if not np.isfinite(a).all() or float(a.min()) < 0.0:
            raise ImageError("XYZ samples must be finite and nonnegative")

    @property
    def width(self) -> int:
        return self.arr.shape[1]

    @property
    def height(self) -> int:
        return self.arr.shape[0]


# ---------------------------------------------------------------------------
# File IO.  PNG is delegated to Pillow (8-bit RGB / gray only); PPM P6 is
# decoded by hand so the byte-level error cases stay under our control.
# ---------------------------------------------------------------------------


def _ppm_tokens(buf: bytes, count: int, start: int) -> tuple[list[int], int]:
    """Read `count` whitespace/comment separated integers from a PPM header."""
    tokens: list[int] = []
    i = start
    while len(tokens) < count:
        if i >= len(buf):
            raise ImageError("malformed image: truncated PPM header")
        ch = buf[i : i + 1]
        if ch in b" \t\r\n":
            i += 1
        elif ch == b"#":
            while i < len(buf) and buf[i : i + 1] not in b"\r\n":
                i += 1
        elif ch.isdigit():
            j = i
            while j < len(buf) and buf[j : j + 1].isdigit():
                j += 1
            tokens.append(int(buf[i:j]))
            i = j
        else:
            raise ImageError("malformed image: bad PPM header token")
    return tokens, i


def _load_ppm(buf: bytes) -> Image:
    if buf[:2] != b"P6":
        raise ImageError("malformed image: not a P6 PPM")
    (w, h, maxval), pos = _ppm_tokens(buf, 3, 2)
    if maxval != 255:
        raise ImageError(f"unsupported bit depth: PPM maxval {maxval}")
    if w < 1 or h < 1:
        raise ImageError("malformed image: bad PPM dimensions")
    if pos >= len(buf) or buf[pos : pos + 1] not in b" \t\r\n":
        raise ImageError("malformed image: missing separator before PPM data")
    pos += 1
    body = buf[pos : pos + w * h * 3]
    if len(body) != w * h * 3:
        raise ImageError("malformed image: truncated PPM pixel data")
    a = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return Image(a.astype(np.float64) / 255.0)


def _save_ppm(img: Image) -> bytes:
    if img.channels != 3:
        raise ImageError("PPM P6 output requires a 3-channel image")
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + _to_uint8(img.arr).tobytes()


def _to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_png(img: Image) -> bytes:
    """Encode as 8-bit PNG (RGB or grayscale); deterministic byte output."""
    a = _to_uint8(img.arr)
    if img.channels == 1:
        pil = _PILImage.fromarray(a[:, :, 0], mode="L")
    else:
        pil = _PILImage.fromarray(a, mode="RGB")
    out = io.BytesIO()
    pil.save(out, format="PNG")
    return out.getvalue()


def decode_image(buf: bytes) -> Image:
    """Decode PNG or PPM(P6) bytes; 8-bit samples map to [0, 1] by v / 255."""
    if buf[:2] == b"P6":
        return _load_ppm(buf)
    try:
        pil = _PILImage.open(io.BytesIO(buf))
        pil.load()
    except Exception as exc:
        raise ImageError(f"malformed image: {exc}") from exc
    if pil.format not in (None, "PNG", "PPM"):
        raise ImageError(f"unsupported format {pil.format}; expected PNG or PPM")
    if pil.mode in ("I", "I;16", "I;16B", "F"):
        raise ImageError(f"unsupported bit depth (mode {pil.mode})")
    if pil.mode == "L":
        a = np.asarray(pil, dtype=np.uint8)[:, :, None]
    else:
        a = np.asarray(pil.convert("RGB"), dtype=np.uint8)
    return Image(a.astype(np.float64) / 255.0)


def load_image(path) -> Image:
    """Load a PNG or PPM(P6) file."""
    return decode_image(Path(path).read_bytes())


def save_image(img: Image, path) -> None:
    """Write PNG (.png) or binary PPM (.ppm); samples quantized to 8 bits."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".png":
        data = encode_png(img)
    elif ext in (".ppm", ".pnm"):
        data = _save_ppm(img)
    else:
        raise ImageError(f"unsupported output extension {ext!r}")
    path.write_bytes(data)


# ---------------------------------------------------------------------------
# Resampling.  Shrinking uses exact box (area) averaging, enlarging uses
# bilinear sampling at pixel centers ((i + 0.5) * src / dst - 0.5) with edge
# clamping.  Both passes are written so a constant input reproduces exactly:
# the area pass accumulates weighted deltas around a pivot sample and the
# linear pass uses the a + t * (b - a) lerp form.
# ---------------------------------------------------------------------------


def _area_axis(a: np.ndarray, dst: int) -> np.ndarray:
    src = a.shape[0]
    out = np.empty((dst,) + a.shape[1:], dtype=a.dtype)
    for k in range(dst):
        # output cell k covers [k*src, (k+1)*src) in units of 1/dst
        lo, hi = k * src, (k + 1) * src
        j0, j1 = lo // dst, (hi - 1) // dst
        pivot = a[j0]
        acc = np.zeros_like(pivot)
        for j in range(j0, j1 + 1):
            overlap = min(hi, (j + 1) * dst) - max(lo, j * dst)
            if j != j0:
                acc += (overlap / src) * (a[j] - pivot)
        out[k] = pivot + acc
    return out


def _linear_axis(a: np.ndarray, dst: int) -> np.ndarray:
    src = a.shape[0]
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1.0)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, src - 1)
    t = (pos - i0).reshape((dst,) + (1,) * (a.ndim - 1))
    lo = a[i0]
    return lo + t * (a[i1] - lo)


def _resample_axis(a: np.ndarray, dst: int) -> np.ndarray:
    src = a.shape[0]
    if dst == src:
        return a
    if dst < src:
        return _area_axis(a, dst)
    return _linear_axis(a, dst)


def resize(img: Image, w: int, h: int) -> Image:
    """Resample to w x h: area averaging per shrinking axis, bilinear per
    enlarging axis (height pass first, then width)."""
    if w < 1 or h < 1:
        raise ImageError("resize target dimensions must be >= 1")
    a = _resample_axis(img.arr, h)
    a = np.moveaxis(_resample_axis(np.moveaxis(a, 1, 0), w), 0, 1)
    return Image.from_array(a)


# ---------------------------------------------------------------------------
# Channel statistics: the mean / population-std primitives every attribute
# score is built from.
# ---------------------------------------------------------------------------


def _as_plane(m) -> np.ndarray:
    if isinstance(m, Image):
        if m.channels != 1:
            raise ImageError("expected a one-channel image")
        a = m.arr[:, :, 0]
    else:
        a = np.asarray(m, dtype=np.float64)
        if a.ndim == 3 and a.shape[2] == 1:
            a = a[:, :, 0]
        if a.ndim != 2:
            raise ImageError("expected a one-channel image")
    if a.size == 0:
        raise ImageError("empty image")
    return a


def channel_mean(m) -> float:
    """Spatial mean of a one-channel image."""
    return float(np.mean(_as_plane(m)))


def channel_std(m) -> float:
    """Population standard deviation (divisor N) of a one-channel image."""
    a = _as_plane(m)
    mu = np.mean(a)
    return float(np.sqrt(np.mean((a - mu) ** 2)))


# ---------------------------------------------------------------------------
# sRGB -> XYZ.  Linearization applies the IEC 61966-2-1 piecewise EOTF; the
# D65 matrix is the standard sRGB one.  `linearize="none"` skips the EOTF
# (deviation knob; see the CLI --linearize flag).
# ---------------------------------------------------------------------------

SRGB_TO_XYZ_MATRIX = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)


def srgb_eotf(v: np.ndarray) -> np.ndarray:
    """Piecewise sRGB decode: linear below 0.04045, gamma 2.4 above."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def srgb_to_xyz(img: Image, linearize: str = "srgb") -> XyzImage:
    """Convert a 3-channel image to CIE XYZ (D65)."""
    if img.channels != 3:
        raise ImageError("srgb_to_xyz requires a 3-channel image")
    if linearize == "srgb":
        rgb = srgb_eotf(img.arr)
    elif linearize == "none":
        rgb = img.arr
    else:
        raise ImageError(f"unknown linearize mode {linearize!r}")
    xyz = rgb @ SRGB_TO_XYZ_MATRIX.T
    return XyzImage(np.maximum(xyz, 0.0))


def mean_chromaticity(xyz: XyzImage) -> tuple[float, float]:
    """(x, y) chromaticity of the channel means; error on an all-black image."""
    mx = float(np.mean(xyz.arr[:, :, 0]))
    my = float(np.mean(xyz.arr[:, :, 1]))
    mz = float(np.mean(xyz.arr[:, :, 2]))
    s = mx + my + mz
    if s <= 1e-12:
        raise ImageError("undefined chromaticity: all-black image")
    return mx / s, my / s
