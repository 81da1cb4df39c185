"""Noise schedule, forward noising, condition cross-attention, the compact
denoiser with its grid head, and the grid-emitting sampler.

The latent is the resized image itself (3 x L x L, L = 64 by default); there
is no learned autoencoder at this scale.  The sampler runs the standard
ancestral update

    Z_prev = (Z - beta_t / sqrt(1 - abar_t) * eps_pred) / sqrt(alpha_t)
             + sigma_t * z

over a respaced subsequence of the training schedule, with z = 0 on the
final step, and only the final step's emitted grid is sliced and applied to
the full-resolution input.

Randomness: all noise draws come from numpy's seeded PCG64 generator
(np.random.default_rng), in a pinned order -- Z_T first, then one z per
non-final step at the top of the loop -- so a seed fully determines the
output on any platform.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .bilateral import (
    AffineBilateralGrid,
    GuidanceNet,
    apply_t,
    identity_matrix_coeffs,
    reshape_grid,
    slice_t,
)
from .imagecore import Image, resize


class DiffusionError(ValueError):
    """Invalid schedule or sampler configuration."""


# ---------------------------------------------------------------------------
# Noise schedule.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta DDPM schedule; index t runs 1..T, arrays are 0-based."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def posterior_sigma(self, t: int) -> float:
        """sqrt of the posterior variance beta~_t; zero at t = 1."""
        ab_t = self.alpha_bar(t)
        ab_prev = self.alpha_bar(t - 1)
        beta = float(self.betas[t - 1])
        return math.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta)


def make_schedule(
    T: int, beta_start: float = 1e-4, beta_end: float = 2e-2
) -> NoiseSchedule:
    if T < 1:
        raise DiffusionError("schedule needs at least one step")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise DiffusionError("betas must satisfy 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def forward_noise(z0, t: int, eps, schedule: NoiseSchedule):
    """Z_t = sqrt(abar_t) Z_0 + sqrt(1 - abar_t) eps; works on numpy or torch."""
    if not 1 <= t <= schedule.T:
        raise DiffusionError(f"timestep {t} outside 1..{schedule.T}")
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


# ---------------------------------------------------------------------------
# Respaced sampling subsequence.  subsequence(T, n) returns n strictly
# decreasing timesteps from T down to ~T/n with stride T/n; the final
# transition jumps to the fully denoised state (abar = 1 side), which keeps
# n = 1 meaningful (a single call at t = T) and the max gap at ceil(T/n).
# ---------------------------------------------------------------------------


def subsequence(T: int, n: int) -> list[int]:
    if not 1 <= n <= T:
        raise DiffusionError(f"step count {n} outside 1..{T}")
    raw = np.linspace(T, T / n, n)
    steps = np.rint(raw).astype(int).tolist()
    for i in range(1, n):
        steps[i] = min(steps[i], steps[i - 1] - 1)
    if steps[-1] < 1:
        raise DiffusionError("respacing produced a timestep below 1")
    return steps


@dataclass(frozen=True)
class RespacedStep:
    """Coefficients for one respaced transition (abar preserved at t)."""

    t: int
    alpha: float
    alpha_bar: float
    sigma: float


def respace(schedule: NoiseSchedule, steps: Sequence[int]) -> list[RespacedStep]:
    out = []
    for i, t in enumerate(steps):
        ab_cur = schedule.alpha_bar(t)
        ab_next = schedule.alpha_bar(steps[i + 1]) if i + 1 < len(steps) else 1.0
        alpha = ab_cur / ab_next
        beta = 1.0 - alpha
        sigma_sq = (1.0 - ab_next) / (1.0 - ab_cur) * beta
        out.append(
            RespacedStep(
                t=t, alpha=alpha, alpha_bar=ab_cur, sigma=math.sqrt(max(sigma_sq, 0.0))
            )
        )
    return out


def reverse_step(z, eps_pred, step: RespacedStep, noise):
    """One ancestral update; `noise` must be zeros on the final step."""
    coeff = (1.0 - step.alpha) / math.sqrt(1.0 - step.alpha_bar)
    return (z - coeff * eps_pred) / math.sqrt(step.alpha) + step.sigma * noise


# ---------------------------------------------------------------------------
# Cross-attention: softmax(Q K^T / sqrt(d)) V added residually to the
# features.  Q = features @ W_Q, K = context @ W_K, V = context @ W_V, where
# the context rows are condition-derived tokens.
# ---------------------------------------------------------------------------


def cross_attention_t(
    features: torch.Tensor, context: torch.Tensor,
    w_q: torch.Tensor, w_k: torch.Tensor, w_v: torch.Tensor,
) -> torch.Tensor:
    if context.dim() == 1:
        context = context[None, :]
    d = w_q.shape[1]
    if w_v.shape[1] != features.shape[-1]:
        raise DiffusionError(
            "residual cross-attention needs the value dimension to match the features"
        )
    q = features @ w_q
    k = context @ w_k
    v = context @ w_v
    attn = torch.softmax(q @ k.T / math.sqrt(d), dim=-1)
    return features + attn @ v


def cross_attention(features, context, w_q, w_k, w_v) -> np.ndarray:
    """Numpy-facing wrapper of the residual cross-attention block."""
    t = lambda a: torch.tensor(np.asarray(a, dtype=np.float64))
    out = cross_attention_t(t(features), t(context), t(w_q), t(w_k), t(w_v))
    return out.numpy()


def attention_weights(features, context, w_q, w_k) -> np.ndarray:
    """Row-normalized attention weights, exposed for testing."""
    t = lambda a: torch.tensor(np.asarray(a, dtype=np.float64))
    f, ctx = t(features), t(context)
    if ctx.dim() == 1:
        ctx = ctx[None, :]
    d = t(w_q).shape[1]
    logits = (f @ t(w_q)) @ (ctx @ t(w_k)).T / math.sqrt(d)
    return torch.softmax(logits, dim=-1).numpy()


# ---------------------------------------------------------------------------
# The denoiser.  Channel plan: concat(Z_t, R') -> 6 input channels; trunk of
# three 3x3 convs (SiLU, time embedding added after the first, one residual
# cross-attention block on the flattened bottleneck); a final 3x3 conv emits
# C_z noise channels plus aux_channels grid features; the grid head turns
# those into h_grid*w_grid*depth*12 coefficients with stride-2 3x3 convs
# (ReLU) followed by two 1x1 convs.  The last 1x1 conv starts at zero weight
# with an identity-grid bias, so an untrained model reproduces its input.
# ---------------------------------------------------------------------------

LATENT_CHANNELS = 3


@dataclass(frozen=True)
class ModelConfig:
    latent_size: int = 64
    hidden_channels: int = 32
    time_dim: int = 32
    cond_dim: int = 4
    aux_channels: int = 4
    grid_height: int = 16
    grid_width: int = 16
    grid_depth: int = 8
    grid_hidden: int = 32
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    # denoiser compute dtype; the pixel path (guidance, slice, apply, scores)
    # always runs in float64.  float32 is ~20x faster for CPU convolutions;
    # gradient-check tests build float64 models.
    dtype: str = "float32"

    def __post_init__(self):
        ratio = self.latent_size / self.grid_width
        if self.grid_height != self.grid_width:
            raise DiffusionError("square grids only (grid_height == grid_width)")
        if ratio < 1 or 2 ** int(round(math.log2(ratio))) != ratio:
            raise DiffusionError("latent_size / grid_width must be a power of two")
        if self.dtype not in ("float32", "float64"):
            raise DiffusionError("dtype must be float32 or float64")

    @property
    def torch_dtype(self):
        return torch.float32 if self.dtype == "float32" else torch.float64

    @property
    def grid_coeff_count(self) -> int:
        return self.grid_height * self.grid_width * self.grid_depth * 12


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos timestep embedding; t is a (B,) float tensor."""
    half = dim // 2
    if half > 1:
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=t.dtype) / (half - 1)
        )
    else:
        freqs = torch.ones(half, dtype=t.dtype)
    args = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class Denoiser(torch.nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dt = cfg.torch_dtype
        h = cfg.hidden_channels
        conv = lambda ci, co, k, s=1: torch.nn.Conv2d(
            ci, co, k, stride=s, padding=k // 2, dtype=dt
        )
        self.conv_in = conv(2 * LATENT_CHANNELS, h, 3)
        self.time_proj = torch.nn.Linear(cfg.time_dim, h, dtype=dt)
        self.conv_mid = conv(h, h, 3)
        self.w_q = torch.nn.Parameter(torch.zeros(h, h, dtype=dt))
        self.w_k = torch.nn.Parameter(torch.zeros(cfg.cond_dim, h, dtype=dt))
        self.w_v = torch.nn.Parameter(torch.zeros(cfg.cond_dim, h, dtype=dt))
        self.conv_late = conv(h, h, 3)
        self.conv_out = conv(h, LATENT_CHANNELS + cfg.aux_channels, 3)

        n_down = int(round(math.log2(cfg.latent_size / cfg.grid_width)))
        downs = []
        ci = cfg.aux_channels
        for _ in range(n_down):
            downs.append(conv(ci, cfg.grid_hidden, 3, s=2))
            ci = cfg.grid_hidden
        self.grid_downs = torch.nn.ModuleList(downs)
        self.grid_mix = conv(ci, cfg.grid_hidden, 1)
        self.grid_out = conv(cfg.grid_hidden, cfg.grid_depth * 12, 1)

    def forward(
        self, z: torch.Tensor, r_resized: torch.Tensor, t: torch.Tensor, c: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(B,3,L,L) x2, (B,), (B,4) -> eps (B,3,L,L), raw grid (B, coeffs)."""
        if z.shape != r_resized.shape:
            raise DiffusionError("latent and resized-image shapes differ")
        dt = self.cfg.torch_dtype
        z, r_resized, t, c = (v.to(dt) for v in (z, r_resized, t, c))
        act = torch.nn.functional.silu
        b = z.shape[0]
        x = self.conv_in(torch.cat([z, r_resized], dim=1))
        emb = self.time_proj(sinusoidal_embedding(t.to(z.dtype), self.cfg.time_dim))
        x = act(x + emb[:, :, None, None])
        x = act(self.conv_mid(x))

        # residual cross-attention over spatial tokens; context = diag(c),
        # one token per attribute so flipping c flips the key/value signs
        bb, ch, hh, ww = x.shape
        tokens = x.reshape(bb, ch, hh * ww).transpose(1, 2)  # (B, N, ch)
        ctx = torch.diag_embed(c)  # (B, 4, 4)
        q = tokens @ self.w_q
        k = ctx @ self.w_k
        v = ctx @ self.w_v
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(ch), dim=-1)
        tokens = tokens + attn @ v
        x = tokens.transpose(1, 2).reshape(bb, ch, hh, ww)

        x = act(self.conv_late(x))
        out = self.conv_out(x)
        eps = out[:, :LATENT_CHANNELS]
        aux = out[:, LATENT_CHANNELS:]
        g = aux
        for conv_dn in self.grid_downs:
            g = torch.relu(conv_dn(g))
        g = self.grid_mix(g)
        g = self.grid_out(g)  # (B, depth*12, gh, gw)
        raw = g.permute(0, 2, 3, 1).reshape(b, -1)  # cell-major, depth then matrix
        return eps, raw


class GridTouchModel(torch.nn.Module):
    """Denoiser plus guidance network; the unit a checkpoint stores."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.denoiser = Denoiser(cfg)
        self.guidance = GuidanceNet()

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.cfg.timesteps, self.cfg.beta_start, self.cfg.beta_end)

    def denoiser_forward(self, z, r_resized, t, c):
        return self.denoiser(z, r_resized, t, c)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def init_parameters(
    model: GridTouchModel,
    rng: np.random.Generator,
    identity_grid_bias: bool = True,
    scale: float = 1.0,
) -> None:
    """Deterministic init from a numpy generator: He-style normal conv/linear
    weights, zero biases, identity-grid bias on the final grid conv."""
    for name, p in model.named_parameters():
        if name.startswith("guidance."):
            continue  # GuidanceNet constructor already set the identity defaults
        with torch.no_grad():
            if name == "denoiser.grid_out.weight" and identity_grid_bias:
                p.zero_()
            elif name == "denoiser.grid_out.bias" and identity_grid_bias:
                bias = np.tile(identity_matrix_coeffs(), model.cfg.grid_depth)
                p.copy_(torch.tensor(bias))
            elif p.dim() >= 2:
                fan_in = p[0].numel()
                w = rng.standard_normal(tuple(p.shape)) * (scale / math.sqrt(fan_in))
                p.copy_(torch.tensor(w))
            else:
                p.zero_()


# ---------------------------------------------------------------------------
# Sampling (the grid-emitting reverse process).
# ---------------------------------------------------------------------------


@dataclass
class TraceEntry:
    t: int
    image: Image
    grid: AffineBilateralGrid


@dataclass
class SampleResult:
    image: Image
    grid: AffineBilateralGrid
    seed: int
    denoiser_calls: int
    trace: list[TraceEntry] | None = None


def _grid_from_raw(raw: torch.Tensor, cfg: ModelConfig) -> AffineBilateralGrid:
    return reshape_grid(
        raw.detach().numpy(), cfg.grid_width, cfg.grid_height, cfg.grid_depth
    )


def sample(
    model: GridTouchModel,
    image: Image,
    c,
    n_steps: int = 20,
    seed: int | None = None,
    trace: bool = False,
    schedule: NoiseSchedule | None = None,
) -> SampleResult:
    """Run the reverse process and apply the final grid to the full-res input."""
    cfg = model.cfg
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2**63))
    c_arr = np.asarray(c, dtype=np.float64)
    if c_arr.shape != (cfg.cond_dim,):
        raise DiffusionError(f"condition must have {cfg.cond_dim} components")
    schedule = schedule or model.schedule()
    steps = respace(schedule, subsequence(schedule.T, n_steps))

    rng = np.random.default_rng(seed)
    L = cfg.latent_size
    z = torch.tensor(rng.standard_normal((1, LATENT_CHANNELS, L, L)))
    r_small = resize(image, L, L)
    r_t = torch.tensor(r_small.arr.transpose(2, 0, 1)[None])
    c_t = torch.tensor(c_arr[None])
    rgb_full = torch.tensor(image.arr)

    calls = 0
    entries: list[TraceEntry] | None = [] if trace else None
    raw_last = None
    with torch.no_grad():
        guide = model.guidance(rgb_full)
        for i, step in enumerate(steps):
            final = i == len(steps) - 1
            noise = (
                torch.zeros_like(z)
                if final
                else torch.tensor(rng.standard_normal(tuple(z.shape)))
            )
            t_t = torch.tensor([float(step.t)], dtype=torch.float64)
            eps_pred, raw = model.denoiser_forward(z, r_t, t_t, c_t)
            calls += 1
            z = reverse_step(z, eps_pred.to(torch.float64), step, noise)
            raw_last = raw[0].to(torch.float64)
            if trace:
                grid_i = _grid_from_raw(raw[0], cfg)
                d_i = apply_t(slice_t(torch.tensor(grid_i.data), guide), rgb_full)
                entries.append(TraceEntry(t=step.t, image=Image(d_i.numpy()), grid=grid_i))

        grid = _grid_from_raw(raw_last, cfg)
        out = apply_t(slice_t(torch.tensor(grid.data), guide), rgb_full)
    result_image = Image(out.numpy())
    if trace:
        # the final trace frame is the sampler output, by construction
        entries[-1] = TraceEntry(t=entries[-1].t, image=result_image, grid=grid)
    return SampleResult(
        image=result_image, grid=grid, seed=seed, denoiser_calls=calls, trace=entries
    )
