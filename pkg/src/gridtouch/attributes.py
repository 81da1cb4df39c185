"""The four image attribute scores: colorfulness, contrast, correlated color
temperature, and perceived brightness.

Each score has a plain numpy form (used for labeling, evaluation and the
service) and a differentiable torch form (used inside the contrastive
training loss).  The two forms implement the same formulas and are
cross-checked in the test suite.

Formulas, with mu/sigma the spatial mean / population std:

  colorfulness  sqrt(sigma(H)^2 + sigma(U)^2) + 0.3*sqrt(mu(H)^2 + mu(U)^2)
                with H = R - G, U = (R + G)/2 - B
  contrast      sum_j sum_{i in N4(j)} (I_i - I_j)^2 / N4(j), squared diffs
                summed over channels, N4(j) = in-bounds 4-neighbor count
  cct           A1*exp(-n/t1) + A2*exp(-n/t2) + A3*exp(-n/t3) + A0 with
                n = (x - 0.3366)/(y - 0.1735), (x, y) the chromaticity of the
                mean XYZ tristimulus
  brightness    sqrt(0.241*mu(R)^2 + 0.691*mu(G)^2 + 0.068*mu(B)^2)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .imagecore import (
    SRGB_TO_XYZ_MATRIX,
    Image,
    channel_mean,
    channel_std,
    mean_chromaticity,
    srgb_to_xyz,
)


class ScoreDomainError(ValueError):
    """A score is undefined for this image (e.g. CCT of an all-black image)."""


@dataclass(frozen=True)
class CctConstants:
    """Exponential-fit constants for CCT from chromaticity."""

    a0: float
    a1: float
    a2: float
    a3: float
    t1: float
    t2: float
    t3: float
    x_e: float = 0.3366
    y_e: float = 0.1735

    def __post_init__(self):
        if self.t1 <= 0 or self.t2 <= 0 or self.t3 <= 0:
            raise ValueError("CCT time constants must be positive")


# Published fit constants (valid around 3000K..50000K).  The corrected a1 is
# 6253.80338; the "as printed" variant (62453.8, rounded t's) is kept because
# it reproduces a widely-copied typo and is exposed via --cct-as-printed.
HERNANDEZ_CONSTANTS = CctConstants(
    a0=-949.86315, a1=6253.80338, a2=28.70599, a3=0.00004,
    t1=0.92159, t2=0.20039, t3=0.07125,
)
AS_PRINTED_CONSTANTS = CctConstants(
    a0=-949.9, a1=62453.8, a2=28.7, a3=0.00004,
    t1=0.9, t2=0.2, t3=0.1,
)

BRIGHTNESS_COEFFS = (0.241, 0.691, 0.068)

# Rec.601 luma, used only by the optional contrast-on-luma mode.
LUMA_COEFFS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class ScoreOptions:
    """Scoring configuration shared by the plain and torch score paths."""

    cct: CctConstants = HERNANDEZ_CONSTANTS
    linearize: str = "srgb"         # "srgb" | "none"
    contrast_channel: str = "rgb"   # "rgb" | "luma"


@dataclass(frozen=True)
class ScoreVector:
    s1_colorfulness: float
    s2_contrast: float
    s3_cct: float
    s4_brightness: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.s1_colorfulness, self.s2_contrast, self.s3_cct, self.s4_brightness]
        )

    def to_dict(self) -> dict:
        return {
            "colorfulness": self.s1_colorfulness,
            "contrast": self.s2_contrast,
            "cct_kelvin": self.s3_cct,
            "brightness": self.s4_brightness,
        }


def score_json(s: ScoreVector) -> str:
    """Canonical JSON serialization, shared by the CLI and the service."""
    return json.dumps(s.to_dict())


ATTRIBUTE_NAMES = ("colorfulness", "contrast", "color_temperature", "brightness")


# ---------------------------------------------------------------------------
# Plain numpy forms.
# ---------------------------------------------------------------------------


def colorfulness(img: Image) -> float:
    if img.channels != 3:
        raise ScoreDomainError("colorfulness requires a 3-channel image")
    r, g, b = img.channel(0), img.channel(1), img.channel(2)
    hh = r - g
    uu = 0.5 * (r + g) - b
    sig = math.sqrt(channel_std(hh) ** 2 + channel_std(uu) ** 2)
    mu = math.sqrt(channel_mean(hh) ** 2 + channel_mean(uu) ** 2)
    return sig + 0.3 * mu


def _contrast_planes(img: Image, opts: ScoreOptions) -> np.ndarray:
    if opts.contrast_channel == "luma":
        if img.channels == 3:
            w = np.array(LUMA_COEFFS)
            return (img.arr @ w)[:, :, None]
        return img.arr
    return img.arr


def contrast(img: Image, opts: ScoreOptions = ScoreOptions()) -> float:
    a = _contrast_planes(img, opts)
    h, w = a.shape[:2]
    acc = np.zeros((h, w))
    dv = np.sum((a[1:, :] - a[:-1, :]) ** 2, axis=2)
    dh = np.sum((a[:, 1:] - a[:, :-1]) ** 2, axis=2)
    acc[1:, :] += dv
    acc[:-1, :] += dv
    acc[:, 1:] += dh
    acc[:, :-1] += dh
    nw = np.full((h, w), 4.0)
    nw[0, :] -= 1.0
    nw[-1, :] -= 1.0
    nw[:, 0] -= 1.0
    nw[:, -1] -= 1.0
    nw = np.maximum(nw, 1.0)  # 1x1 image has no neighbors; score is 0 anyway
    return float(np.sum(acc / nw))


def cct(img: Image, opts: ScoreOptions = ScoreOptions()) -> float:
    if img.channels != 3:
        raise ScoreDomainError("cct requires a 3-channel image")
    xyz = srgb_to_xyz(img, linearize=opts.linearize)
    try:
        x, y = mean_chromaticity(xyz)
    except ValueError as exc:
        raise ScoreDomainError(str(exc)) from exc
    k = opts.cct
    if abs(y - k.y_e) <= 1e-12:
        raise ScoreDomainError("undefined CCT: chromaticity y at the epicenter")
    n = (x - k.x_e) / (y - k.y_e)
    return (
        k.a1 * math.exp(-n / k.t1)
        + k.a2 * math.exp(-n / k.t2)
        + k.a3 * math.exp(-n / k.t3)
        + k.a0
    )


def brightness(img: Image) -> float:
    if img.channels != 3:
        raise ScoreDomainError("brightness requires a 3-channel image")
    cr, cg, cb = BRIGHTNESS_COEFFS
    mr = channel_mean(img.channel(0))
    mg = channel_mean(img.channel(1))
    mb = channel_mean(img.channel(2))
    return math.sqrt(cr * mr * mr + cg * mg * mg + cb * mb * mb)


def score_vector(img: Image, opts: ScoreOptions = ScoreOptions()) -> ScoreVector:
    """All four scores; CCT domain errors propagate."""
    return ScoreVector(
        s1_colorfulness=colorfulness(img),
        s2_contrast=contrast(img, opts),
        s3_cct=cct(img, opts),
        s4_brightness=brightness(img),
    )


# ---------------------------------------------------------------------------
# Differentiable torch forms.  Inputs are (h, w, 3) tensors in [0, 1].
# ---------------------------------------------------------------------------


def _mean_t(x: torch.Tensor) -> torch.Tensor:
    return x.mean()


def _var_t(x: torch.Tensor) -> torch.Tensor:
    mu = x.mean()
    return ((x - mu) ** 2).mean()


def colorfulness_t(rgb: torch.Tensor) -> torch.Tensor:
    hh = rgb[:, :, 0] - rgb[:, :, 1]
    uu = 0.5 * (rgb[:, :, 0] + rgb[:, :, 1]) - rgb[:, :, 2]
    sig = torch.sqrt(_var_t(hh) + _var_t(uu))
    mu = torch.sqrt(_mean_t(hh) ** 2 + _mean_t(uu) ** 2)
    return sig + 0.3 * mu


def contrast_t(rgb: torch.Tensor, opts: ScoreOptions = ScoreOptions()) -> torch.Tensor:
    if opts.contrast_channel == "luma":
        w = torch.tensor(LUMA_COEFFS, dtype=rgb.dtype)
        a = (rgb @ w)[:, :, None]
    else:
        a = rgb
    h, w_ = a.shape[:2]
    pad = torch.nn.functional.pad
    dv = ((a[1:, :] - a[:-1, :]) ** 2).sum(dim=2)
    dh = ((a[:, 1:] - a[:, :-1]) ** 2).sum(dim=2)
    acc = (
        pad(dv, (0, 0, 1, 0)) + pad(dv, (0, 0, 0, 1))
        + pad(dh, (1, 0, 0, 0)) + pad(dh, (0, 1, 0, 0))
    )
    nw = torch.full((h, w_), 4.0, dtype=rgb.dtype)
    nw[0, :] -= 1.0
    nw[-1, :] -= 1.0
    nw[:, 0] -= 1.0
    nw[:, -1] -= 1.0
    nw = torch.clamp(nw, min=1.0)
    return (acc / nw).sum()


def srgb_eotf_t(v: torch.Tensor) -> torch.Tensor:
    # clamp inside the power to keep the gradient finite at v == -0.055
    hi = ((torch.clamp(v, min=0.0) + 0.055) / 1.055) ** 2.4
    return torch.where(v <= 0.04045, v / 12.92, hi)


# Validity neighborhood of the exponential CCT fit.  The differentiable form
# clamps n here: outside it the fastest exponential overflows float64 during
# backprop when a contrastive branch wanders off-gamut, and the fit is
# meaningless there anyway.  The plain form stays unclamped.
CCT_N_LIMIT = 1.5


def cct_t(rgb: torch.Tensor, opts: ScoreOptions = ScoreOptions()) -> torch.Tensor:
    lin = srgb_eotf_t(rgb) if opts.linearize == "srgb" else rgb
    m = torch.tensor(SRGB_TO_XYZ_MATRIX, dtype=rgb.dtype)
    xyz = lin.reshape(-1, 3) @ m.T
    means = xyz.mean(dim=0)
    s = means.sum()
    if float(s.detach()) <= 1e-12:
        raise ScoreDomainError("undefined chromaticity: all-black image")
    x = means[0] / s
    y = means[1] / s
    k = opts.cct
    if abs(float(y.detach()) - k.y_e) <= 1e-12:
        raise ScoreDomainError("undefined CCT: chromaticity y at the epicenter")
    n = torch.clamp((x - k.x_e) / (y - k.y_e), -CCT_N_LIMIT, CCT_N_LIMIT)
    return (
        k.a1 * torch.exp(-n / k.t1)
        + k.a2 * torch.exp(-n / k.t2)
        + k.a3 * torch.exp(-n / k.t3)
        + k.a0
    )


def brightness_t(rgb: torch.Tensor) -> torch.Tensor:
    cr, cg, cb = BRIGHTNESS_COEFFS
    mr = rgb[:, :, 0].mean()
    mg = rgb[:, :, 1].mean()
    mb = rgb[:, :, 2].mean()
    return torch.sqrt(cr * mr * mr + cg * mg * mg + cb * mb * mb)


def scores_t(rgb: torch.Tensor, opts: ScoreOptions = ScoreOptions()) -> torch.Tensor:
    """Stacked (4,) score tensor; raises ScoreDomainError on CCT singularity."""
    return torch.stack(
        [
            colorfulness_t(rgb),
            contrast_t(rgb, opts),
            cct_t(rgb, opts),
            brightness_t(rgb),
        ]
    )


def scores_batch_t(
    rgb: torch.Tensor, opts: ScoreOptions = ScoreOptions()
) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched scores for training: rgb (B, h, w, 3) -> ((B, 4), valid (B,)).

    Rows sitting on a singularity (all-black, CCT epicenter, or exactly
    constant color planes, where the sqrt/ratio gradients blow up) are
    flagged invalid; their score entries hold guarded placeholder values so
    the shared backward stays finite, and callers must mask them out.
    """
    b = rgb.shape[0]
    flat = rgb.reshape(b, -1, 3)
    tiny = 1e-30
    one = torch.ones((), dtype=rgb.dtype)

    hh = flat[:, :, 0] - flat[:, :, 1]
    uu = 0.5 * (flat[:, :, 0] + flat[:, :, 1]) - flat[:, :, 2]
    mu_h, mu_u = hh.mean(dim=1), uu.mean(dim=1)
    var_h = ((hh - mu_h[:, None]) ** 2).mean(dim=1)
    var_u = ((uu - mu_u[:, None]) ** 2).mean(dim=1)
    var_sum = var_h + var_u
    mu_sum = mu_h**2 + mu_u**2
    ok_var = var_sum.detach() > tiny
    ok_mu = mu_sum.detach() > tiny
    s1 = torch.sqrt(torch.where(ok_var, var_sum, one)) + 0.3 * torch.sqrt(
        torch.where(ok_mu, mu_sum, one)
    )

    if opts.contrast_channel == "luma":
        w = torch.tensor(LUMA_COEFFS, dtype=rgb.dtype)
        a = (rgb @ w)[..., None]
    else:
        a = rgb
    pad = torch.nn.functional.pad
    dv = ((a[:, 1:] - a[:, :-1]) ** 2).sum(dim=3)
    dh = ((a[:, :, 1:] - a[:, :, :-1]) ** 2).sum(dim=3)
    acc = (
        pad(dv, (0, 0, 1, 0)) + pad(dv, (0, 0, 0, 1))
        + pad(dh, (1, 0)) + pad(dh, (0, 1))
    )
    h_, w_ = rgb.shape[1], rgb.shape[2]
    nw = torch.full((h_, w_), 4.0, dtype=rgb.dtype)
    nw[0, :] -= 1.0
    nw[-1, :] -= 1.0
    nw[:, 0] -= 1.0
    nw[:, -1] -= 1.0
    nw = torch.clamp(nw, min=1.0)
    s2 = (acc / nw).sum(dim=(1, 2))

    lin = srgb_eotf_t(flat) if opts.linearize == "srgb" else flat
    m = torch.tensor(SRGB_TO_XYZ_MATRIX, dtype=rgb.dtype)
    means = (lin @ m.T).mean(dim=1)  # (B, 3)
    total = means.sum(dim=1)
    ok_black = total.detach() > 1e-12
    denom = torch.where(ok_black, total, one)
    x = means[:, 0] / denom
    y = means[:, 1] / denom
    k = opts.cct
    ydiff = y - k.y_e
    ok_eps = ydiff.detach().abs() > 1e-12
    ydiff = torch.where(ok_eps, ydiff, one)
    n = torch.clamp((x - k.x_e) / ydiff, -CCT_N_LIMIT, CCT_N_LIMIT)
    s3 = (
        k.a1 * torch.exp(-n / k.t1)
        + k.a2 * torch.exp(-n / k.t2)
        + k.a3 * torch.exp(-n / k.t3)
        + k.a0
    )

    cr, cg, cb = BRIGHTNESS_COEFFS
    mrgb = flat.mean(dim=1)
    bsq = cr * mrgb[:, 0] ** 2 + cg * mrgb[:, 1] ** 2 + cb * mrgb[:, 2] ** 2
    ok_b = bsq.detach() > tiny
    s4 = torch.sqrt(torch.where(ok_b, bsq, one))

    valid = ok_var & ok_mu & ok_black & ok_eps & ok_b
    return torch.stack([s1, s2, s3, s4], dim=1), valid


def score_gradient(
    img: Image, attribute: int, opts: ScoreOptions = ScoreOptions()
) -> np.ndarray:
    """d(score)/d(pixel) for attribute in {1..4}, shaped like img.arr."""
    if attribute not in (1, 2, 3, 4):
        raise ValueError("attribute index must be in 1..4")
    rgb = torch.tensor(img.arr, dtype=torch.float64, requires_grad=True)
    fns = {1: colorfulness_t, 2: lambda t: contrast_t(t, opts),
           3: lambda t: cct_t(t, opts), 4: brightness_t}
    value = fns[attribute](rgb)
    value.backward()
    grad = rgb.grad.detach().numpy()
    if not np.isfinite(grad).all():
        raise ScoreDomainError(f"singular gradient for attribute {attribute}")
    return grad
