"""Affine bilateral grid engine: guidance map, trilinear slicing, per-pixel
affine apply, grid reshape and binary serialization.

Grid layout, fixed and bit-stable: data[gy, gx, gz, k] with gy the grid row,
gx the grid column, gz the intensity bin, and k the 12 coefficients of the
3x4 affine matrix in row-major order (k = 4*out_row + in_col, column 3 is the
translation term).  Flattening/reshaping uses C order of exactly this layout.

Coordinate convention (sample-centered, edge-clamped):

  gx = (x + 0.5) / W * w_grid - 0.5      gy likewise with h_grid
  gz = G[y, x] * depth - 0.5             intensity bins are depth cells

all clamped into [0, size - 1] before the trilinear blend.  Interpolation is
written as nested lerps (a + t*(b - a)) so a grid with identical cells
reproduces that cell exactly.

The canonical kernels are torch functions (the training loss needs their
gradients); the numpy-facing wrappers convert at the boundary.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .imagecore import Image

GRID_MAGIC = b"ABGR1"

DEFAULT_GRID_HEIGHT = 16
DEFAULT_GRID_WIDTH = 16
DEFAULT_GRID_DEPTH = 8


class GridError(ValueError):
    """Inconsistent grid data or serialization."""


def identity_matrix_coeffs() -> np.ndarray:
    """The 12 coefficients of [I3 | 0] in row-major order."""
    m = np.zeros(12)
    m[0] = m[5] = m[10] = 1.0
    return m


@dataclass(frozen=True)
class AffineBilateralGrid:
    """(h_grid, w_grid, depth, 12) array of per-cell affine matrices."""

    data: np.ndarray

    def __post_init__(self):
        a = self.data
        if a.ndim != 4 or a.shape[3] != 12:
            raise GridError("grid data must be shaped (h_grid, w_grid, depth, 12)")
        if a.dtype != np.float64:
            raise GridError("grid data must be float64")
        if not np.isfinite(a).all():
            raise GridError("grid coefficients must be finite")

    @property
    def h_grid(self) -> int:
        return self.data.shape[0]

    @property
    def w_grid(self) -> int:
        return self.data.shape[1]

    @property
    def depth(self) -> int:
        return self.data.shape[2]

    def matrices(self) -> np.ndarray:
        return self.data.reshape(self.h_grid, self.w_grid, self.depth, 3, 4)

    def flatten(self) -> np.ndarray:
        return self.data.reshape(-1).copy()


def identity_grid(
    w_grid: int = DEFAULT_GRID_WIDTH,
    h_grid: int = DEFAULT_GRID_HEIGHT,
    depth: int = DEFAULT_GRID_DEPTH,
) -> AffineBilateralGrid:
    """Every cell holds [I3 | 0]; slicing + applying it is the identity map."""
    data = np.tile(identity_matrix_coeffs(), (h_grid, w_grid, depth, 1))
    return AffineBilateralGrid(data)


def reshape_grid(
    raw,
    w_grid: int = DEFAULT_GRID_WIDTH,
    h_grid: int = DEFAULT_GRID_HEIGHT,
    depth: int = DEFAULT_GRID_DEPTH,
) -> AffineBilateralGrid:
    """Reshape a flat coefficient vector into a grid (layout documented above)."""
    a = np.asarray(raw, dtype=np.float64).reshape(-1)
    expected = h_grid * w_grid * depth * 12
    if a.size != expected:
        raise GridError(
            f"grid coefficient count mismatch: expected {expected}, got {a.size}"
        )
    return AffineBilateralGrid(a.reshape(h_grid, w_grid, depth, 12).copy())


# ---------------------------------------------------------------------------
# Guidance network: G_p = clamp(b + sum_ch rho(W @ rgb_p + b'), 0, 1) with
# rho(x) = sum_i t_i * max(x - n_i, 0) applied elementwise over 16 terms.
# ---------------------------------------------------------------------------


def _default_slopes() -> np.ndarray:
    t = np.zeros(16)
    t[0] = 1.0 / 3.0  # G(gray v) == v with the first threshold at 0
    return t


def _default_thresholds() -> np.ndarray:
    return np.arange(16) / 16.0


@dataclass(frozen=True)
class GuidanceParams:
    """Pointwise guidance transform parameters.

    Defaults: color matrix = identity (per the usual init), biases zero,
    slopes (1/3, 0, ..., 0), thresholds i/16 -- which makes the default
    guidance the channel mean of nonnegative inputs.
    """

    color_matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    bias: float = 0.0
    channel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    slopes: np.ndarray = field(default_factory=_default_slopes)
    thresholds: np.ndarray = field(default_factory=_default_thresholds)

    def __post_init__(self):
        if np.asarray(self.color_matrix).shape != (3, 3):
            raise GridError("guidance color matrix must be 3x3")
        if np.asarray(self.slopes).shape != (16,) or np.asarray(self.thresholds).shape != (16,):
            raise GridError("guidance slopes/thresholds must have 16 entries")


class GuidanceNet(torch.nn.Module):
    """Trainable torch twin of GuidanceParams."""

    def __init__(self, params: GuidanceParams | None = None):
        super().__init__()
        p = params or GuidanceParams()
        as_t = lambda a: torch.tensor(np.asarray(a, dtype=np.float64))
        self.color_matrix = torch.nn.Parameter(as_t(p.color_matrix))
        self.bias = torch.nn.Parameter(torch.tensor(float(p.bias), dtype=torch.float64))
        self.channel_bias = torch.nn.Parameter(as_t(p.channel_bias))
        self.slopes = torch.nn.Parameter(as_t(p.slopes))
        self.thresholds = torch.nn.Parameter(as_t(p.thresholds))

    def forward(self, rgb: torch.Tensor) -> torch.Tensor:
        """rgb (..., 3) -> guidance (...), clamped to [0, 1]."""
        x = rgb @ self.color_matrix.T + self.channel_bias  # (..., 3)
        relu = torch.clamp(x[..., None] - self.thresholds, min=0.0)  # (..., 3, 16)
        rho = (relu * self.slopes).sum(dim=-1)  # (..., 3)
        return torch.clamp(self.bias + rho.sum(dim=-1), 0.0, 1.0)

    def to_params(self) -> GuidanceParams:
        g = lambda t: t.detach().numpy().copy()
        return GuidanceParams(
            color_matrix=g(self.color_matrix),
            bias=float(self.bias.detach()),
            channel_bias=g(self.channel_bias),
            slopes=g(self.slopes),
            thresholds=g(self.thresholds),
        )


def guidance_map(img: Image, params: GuidanceParams | None = None) -> np.ndarray:
    """Pointwise guidance map of a 3-channel image, values in [0, 1]."""
    if img.channels != 3:
        raise GridError("guidance map requires a 3-channel image")
    with torch.no_grad():
        net = GuidanceNet(params)
        out = net(torch.tensor(img.arr, dtype=torch.float64))
    return out.numpy()


# ---------------------------------------------------------------------------
# Slicing and applying.
# ---------------------------------------------------------------------------


def _lerp(a: torch.Tensor, b: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    return a + t * (b - a)


def _slice_batch(grid: torch.Tensor, guide: torch.Tensor) -> torch.Tensor:
    """Batched trilinear lookup: grid (B, hg, wg, D, 12), guide (B, h, w)."""
    nb, hg, wg, depth = grid.shape[0], grid.shape[1], grid.shape[2], grid.shape[3]
    h, w = guide.shape[1], guide.shape[2]
    dt = grid.dtype
    xs = ((torch.arange(w, dtype=dt) + 0.5) / w) * wg - 0.5
    ys = ((torch.arange(h, dtype=dt) + 0.5) / h) * hg - 0.5
    gx = xs.clamp(0.0, wg - 1.0)
    gy = ys.clamp(0.0, hg - 1.0)
    gz = (guide.clamp(0.0, 1.0) * depth - 0.5).clamp(0.0, depth - 1.0)

    x0 = gx.floor().long().clamp(max=wg - 1)
    y0 = gy.floor().long().clamp(max=hg - 1)
    z0 = gz.floor().long().clamp(max=depth - 1)
    x1 = (x0 + 1).clamp(max=wg - 1)
    y1 = (y0 + 1).clamp(max=hg - 1)
    z1 = (z0 + 1).clamp(max=depth - 1)
    tx = (gx - x0.to(dt))[None, None, :, None]   # (1, 1, w, 1)
    ty = (gy - y0.to(dt))[None, :, None, None]   # (1, h, 1, 1)
    tz = (gz - z0.to(dt))[:, :, :, None]         # (B, h, w, 1)

    bi = torch.arange(nb)[:, None, None]          # (B, 1, 1)
    yi0, yi1 = y0[None, :, None], y1[None, :, None]
    xi0, xi1 = x0[None, None, :], x1[None, None, :]

    def corner(yi, xi, zi):
        return grid[bi, yi, xi, zi]               # -> (B, h, w, 12)

    c00 = _lerp(corner(yi0, xi0, z0), corner(yi0, xi0, z1), tz)
    c01 = _lerp(corner(yi0, xi1, z0), corner(yi0, xi1, z1), tz)
    c10 = _lerp(corner(yi1, xi0, z0), corner(yi1, xi0, z1), tz)
    c11 = _lerp(corner(yi1, xi1, z0), corner(yi1, xi1, z1), tz)
    c0 = _lerp(c00, c01, tx)
    c1 = _lerp(c10, c11, tx)
    return _lerp(c0, c1, ty)


def slice_t(grid: torch.Tensor, guide: torch.Tensor) -> torch.Tensor:
    """Trilinear per-pixel lookup.

    grid (h_grid, w_grid, depth, 12), guide (h, w) in [0, 1]
    -> sliced (h, w, 12).  A leading batch dimension on both arguments is
    also accepted.
    """
    if grid.dim() == 4:
        return _slice_batch(grid[None], guide[None])[0]
    return _slice_batch(grid, guide)


def apply_t(sliced: torch.Tensor, rgb: torch.Tensor) -> torch.Tensor:
    """Per-pixel affine apply: out = M[:, :3] @ rgb + M[:, 3], clamped [0, 1].

    sliced (..., h, w, 12), rgb (..., h, w, 3) -> (..., h, w, 3)
    """
    if sliced.shape[:-1] != rgb.shape[:-1]:
        raise GridError(
            f"sliced {tuple(sliced.shape[:-1])} and image {tuple(rgb.shape[:-1])} differ"
        )
    m = sliced.reshape(*sliced.shape[:-1], 3, 4)
    out = (m[..., :3] * rgb[..., None, :]).sum(dim=-1) + m[..., 3]
    return out.clamp(0.0, 1.0)


def slice_apply_t(
    grid: torch.Tensor, guide: torch.Tensor, rgb: torch.Tensor
) -> torch.Tensor:
    return apply_t(slice_t(grid, guide), rgb)


def slice_grid(grid: AffineBilateralGrid, guide: np.ndarray) -> np.ndarray:
    """Numpy-facing slice: returns the (h, w, 12) per-pixel affine matrices."""
    g = np.asarray(guide, dtype=np.float64)
    if g.ndim == 3 and g.shape[2] == 1:
        g = g[:, :, 0]
    with torch.no_grad():
        out = slice_t(torch.tensor(grid.data), torch.tensor(g))
    return out.numpy()


def apply_affine(sliced: np.ndarray, img: Image) -> Image:
    """Apply per-pixel 3x4 matrices to an image; output clamped to [0, 1]."""
    with torch.no_grad():
        out = apply_t(
            torch.tensor(np.asarray(sliced, dtype=np.float64)),
            torch.tensor(img.arr),
        )
    return Image(out.numpy())


def slice_apply(
    grid: AffineBilateralGrid, img: Image, params: GuidanceParams | None = None
) -> Image:
    """Guidance + slice + apply in one call (the Slice&Apply step)."""
    guide = guidance_map(img, params)
    return apply_affine(slice_grid(grid, guide), img)


# ---------------------------------------------------------------------------
# Serialization: magic "ABGR1", then little-endian uint32 w_grid, h_grid,
# depth, then float32 coefficients in the documented C-order layout.
# ---------------------------------------------------------------------------


def save_grid(grid: AffineBilateralGrid, path) -> None:
    header = GRID_MAGIC + struct.pack("<III", grid.w_grid, grid.h_grid, grid.depth)
    body = grid.data.astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def load_grid(path) -> AffineBilateralGrid:
    buf = Path(path).read_bytes()
    if buf[: len(GRID_MAGIC)] != GRID_MAGIC:
        raise GridError("not an affine bilateral grid file (bad magic)")
    off = len(GRID_MAGIC)
    w_grid, h_grid, depth = struct.unpack_from("<III", buf, off)
    off += 12
    count = w_grid * h_grid * depth * 12
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
    if data.size != count:
        raise GridError("truncated grid file")
    return AffineBilateralGrid(
        data.astype(np.float64).reshape(h_grid, w_grid, depth, 12)
    )
