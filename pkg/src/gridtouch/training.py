"""Losses, the three-branch contrastive training step, the synthetic
multi-expert dataset generator, checkpoints, and the optimizer loop.

Loss conventions: both reconstruction norms are per-element means (so the
pixel weight is resolution independent), and the contrastive term is

    sum over {i | c_i != 0} of softplus((|s_i - s_i+| - |s_i - s_i-|) / tau)

which is the stable form of the two-way InfoNCE ratio.  Scores are computed
on the clamped pixel-space output, i.e. on exactly what a user would see.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .attributes import ScoreDomainError, ScoreOptions, scores_batch_t
from .bilateral import apply_t, slice_t
from .conditioning import (
    GroundTruthRef,
    RetouchGroup,
    build_conditions,
    save_manifest,
)
from .diffusion import (
    GridTouchModel,
    LATENT_CHANNELS,
    ModelConfig,
    NoiseSchedule,
    init_parameters,
)
from .imagecore import Image, load_image, resize, save_image


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Loss mix per the published recipe: lambda = 1, beta = 0.01, tau = 0.1.

    The learning rate default (1e-3) is the desk-scale value for training the
    compact model from scratch; the original full-scale recipe fine-tunes a
    pretrained backbone at 1e-6.
    """

    lambda_cl: float = 1.0
    beta_pixel: float = 0.01
    tau: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0
    # contrastive term disabled for the first N epochs.  Starting the
    # contrastive pressure only after reconstruction has shaped the grid
    # keeps its (saturating) terms on the correct side from the start;
    # training from a pretrained backbone gets the same effect for free.
    cl_warmup_epochs: int = 0
    # cosine learning-rate decay down to this fraction of learning_rate
    # (spanning the warmup when a separate contrastive rate is set,
    # otherwise the whole run)
    lr_final_fraction: float = 1.0
    # learning rate for the post-warmup contrastive epochs; None = keep the
    # cosine schedule.  The contrastive gradients are much stiffer than the
    # reconstruction ones, so this phase usually wants a far smaller step.
    cl_learning_rate: float | None = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lambda_cl < 0 or self.beta_pixel < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.cl_warmup_epochs < 0:
            raise ValueError("warmup epochs must be nonnegative")


@dataclass
class Batch:
    """One training batch: full-res pairs plus the sampled noise state."""

    x0: torch.Tensor          # (B, h, w, 3) ground truths
    r: torch.Tensor           # (B, h, w, 3) inputs
    r_resized: torch.Tensor   # (B, 3, L, L)
    z0: torch.Tensor          # (B, 3, L, L)
    c: torch.Tensor           # (B, 4)
    t: torch.Tensor           # (B,) long in 1..T
    eps: torch.Tensor         # (B, 3, L, L)
    eps_prime: torch.Tensor   # (B, 3, L, L)


@dataclass
class LossBreakdown:
    total: float
    l_rec: float
    l_latent: float
    l_pixel: float
    l_cl: float
    skipped: int


def l_rec(eps_pred, eps, d_t, x0, beta: float):
    """Mean-squared reconstruction in latent and pixel space."""
    if eps_pred.shape != eps.shape or d_t.shape != x0.shape:
        raise TrainingError("reconstruction loss shape mismatch")
    return ((eps_pred - eps) ** 2).mean() + beta * ((d_t - x0) ** 2).mean()


def l_cl(s, s_plus, s_minus, c, tau: float):
    """Contrastive loss over active attributes; 0 when all c_i are 0."""
    s, s_plus, s_minus = (torch.as_tensor(v, dtype=torch.float64) for v in (s, s_plus, s_minus))
    c = torch.as_tensor(c, dtype=torch.float64)
    active = c != 0
    if not bool(active.any()):
        return torch.zeros((), dtype=torch.float64)
    a = torch.abs(s - s_plus) / tau
    b = torch.abs(s - s_minus) / tau
    terms = torch.nn.functional.softplus(a - b)
    return terms[active].sum()


def _to_chw(arr: np.ndarray) -> np.ndarray:
    return arr.transpose(2, 0, 1)


def make_batch(
    pairs: Sequence[dict],
    indices: Sequence[int],
    schedule: NoiseSchedule,
    cfg_model: ModelConfig,
    rng: np.random.Generator,
) -> Batch:
    """Assemble a batch from preloaded pair dicts (keys: input, gt, c)."""
    L = cfg_model.latent_size
    x0, r, rr, z0, cs = [], [], [], [], []
    for i in indices:
        p = pairs[i]
        x0.append(p["gt"])
        r.append(p["input"])
        rr.append(_to_chw(p["input_resized"]))
        z0.append(_to_chw(p["gt_resized"]))
        cs.append(p["c"])
    b = len(indices)
    t = rng.integers(1, schedule.T + 1, size=b)
    eps = rng.standard_normal((b, LATENT_CHANNELS, L, L))
    eps_prime = rng.standard_normal((b, LATENT_CHANNELS, L, L))
    tt = lambda a: torch.tensor(np.asarray(a, dtype=np.float64))
    return Batch(
        x0=tt(np.stack(x0)),
        r=tt(np.stack(r)),
        r_resized=tt(np.stack(rr)),
        z0=tt(np.stack(z0)),
        c=tt(np.stack(cs)),
        t=torch.tensor(t, dtype=torch.long),
        eps=tt(eps),
        eps_prime=tt(eps_prime),
    )


def _pixel_outputs(
    raw: torch.Tensor, guides: torch.Tensor, rgb: torch.Tensor, cfg_model: ModelConfig
):
    """Reshape raw grids and slice/apply them onto the full-res inputs.

    The whole training pixel path runs in the denoiser's dtype; sampling
    (diffusion.sample) keeps its own float64 path for the exactness
    contracts.
    """
    b = raw.shape[0]
    grids = raw.reshape(
        b, cfg_model.grid_height, cfg_model.grid_width, cfg_model.grid_depth, 12
    )
    return apply_t(slice_t(grids, guides.to(raw.dtype)), rgb.to(raw.dtype))


def step_loss(
    model: GridTouchModel,
    batch: Batch,
    cfg: TrainConfig,
    schedule: NoiseSchedule,
    score_opts: ScoreOptions = ScoreOptions(),
):
    """Forward pass of the full three-branch training objective.

    The regular / positive / negative branches run as one fused denoiser
    call of 3B elements: (Z_t, c), (Z_t', c), (Z_t, -c).  Returns (total
    loss tensor, LossBreakdown).  Batch elements whose score path sits on a
    singularity are dropped from the loss and counted as skipped.
    """
    ab = torch.tensor(schedule.alpha_bars, dtype=torch.float64)[batch.t - 1]
    sq = ab.sqrt()[:, None, None, None]
    sq1 = (1.0 - ab).sqrt()[:, None, None, None]
    z_t = sq * batch.z0 + sq1 * batch.eps
    tf = batch.t.to(torch.float64)
    b = z_t.shape[0]
    guides = model.guidance(batch.r)  # (B, h, w); shared by the three branches

    if cfg.lambda_cl == 0.0:
        # reconstruction only: the contrastive branches would not contribute
        eps_pred, raw = model.denoiser(z_t, batch.r_resized, tf, batch.c)
        d_t = _pixel_outputs(raw, guides, batch.r, model.cfg)
        latent = ((eps_pred - batch.eps) ** 2).mean()
        pixel = ((d_t - batch.x0) ** 2).mean()
        rec = latent + cfg.beta_pixel * pixel
        return rec, LossBreakdown(
            total=float(rec.detach()),
            l_rec=float(rec.detach()),
            l_latent=float(latent.detach()),
            l_pixel=float(pixel.detach()),
            l_cl=0.0,
            skipped=0,
        )

    z_t_prime = sq * batch.z0 + sq1 * batch.eps_prime
    z_all = torch.cat([z_t, z_t_prime, z_t])
    r_all = batch.r_resized.repeat(3, 1, 1, 1)
    t_all = tf.repeat(3)
    c_all = torch.cat([batch.c, batch.c, -batch.c])
    eps_all, raw_all = model.denoiser(z_all, r_all, t_all, c_all)
    eps_pred = eps_all[:b]

    d_all = _pixel_outputs(
        raw_all, guides.repeat(3, 1, 1), batch.r.repeat(3, 1, 1, 1), model.cfg
    )
    d_t = d_all[:b]

    scores_all, valid_all = scores_batch_t(d_all, score_opts)
    s, s_pos, s_neg = scores_all[:b], scores_all[b : 2 * b], scores_all[2 * b :]
    valid = valid_all[:b] & valid_all[b : 2 * b] & valid_all[2 * b :]
    skipped = int(b - valid.sum())
    if skipped == b:
        total = torch.zeros((), dtype=d_all.dtype, requires_grad=True)
        return total, LossBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, skipped)

    active = (batch.c != 0).to(d_all.dtype)
    a_pos = torch.abs(s - s_pos) / cfg.tau
    a_neg = torch.abs(s - s_neg) / cfg.tau
    terms = torch.nn.functional.softplus(a_pos - a_neg) * active
    per_element_cl = terms.sum(dim=1)

    ki = torch.nonzero(valid, as_tuple=False).reshape(-1)
    latent = ((eps_pred[ki] - batch.eps[ki]) ** 2).mean()
    pixel = ((d_t[ki] - batch.x0[ki]) ** 2).mean()
    rec = latent + cfg.beta_pixel * pixel
    cl = per_element_cl[ki].mean()
    total = rec + cfg.lambda_cl * cl
    breakdown = LossBreakdown(
        total=float(total.detach()),
        l_rec=float(rec.detach()),
        l_latent=float(latent.detach()),
        l_pixel=float(pixel.detach()),
        l_cl=float(cl.detach()),
        skipped=skipped,
    )
    return total, breakdown


def training_step(
    model: GridTouchModel,
    batch: Batch,
    cfg: TrainConfig,
    schedule: NoiseSchedule,
    score_opts: ScoreOptions = ScoreOptions(),
):
    """Compute the loss and its gradients (does not apply the update)."""
    model.zero_grad(set_to_none=True)
    total, breakdown = step_loss(model, batch, cfg, schedule, score_opts)
    total.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    return breakdown, grads


# ---------------------------------------------------------------------------
# Synthetic multi-expert dataset.
# ---------------------------------------------------------------------------


def _upsample_field(rng: np.random.Generator, coarse: int, size: int) -> np.ndarray:
    small = rng.random((coarse, coarse))
    img = Image.from_array(small[:, :, None])
    return resize(img, size, size).arr[:, :, 0]


def _base_image(rng: np.random.Generator, size: int) -> np.ndarray:
    f1 = _upsample_field(rng, 5, size)
    f2 = _upsample_field(rng, 9, size)
    tex = _upsample_field(rng, max(size // 4, 2), size)
    c1 = 0.25 + 0.5 * rng.random(3)
    c2 = 0.25 + 0.5 * rng.random(3)
    c3 = rng.random(3) - 0.5
    img = (
        f1[:, :, None] * c1
        + (1.0 - f1)[:, :, None] * c2
        + 0.35 * (f2 - 0.5)[:, :, None] * c3
        + 0.08 * (tex - 0.5)[:, :, None]
    )
    # gaussian blob highlight
    yy, xx = np.mgrid[0:size, 0:size] / size
    cy, cx = rng.random(2)
    blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.08**2)))
    img += 0.25 * blob[:, :, None] * (0.3 + 0.7 * rng.random(3))
    # gray-world balance keeps the mean chromaticity near the achromatic
    # point, so preset tints land inside the CCT fit's validity range
    means = img.reshape(-1, 3).mean(axis=0)
    img = img * (means.mean() / np.maximum(means, 1e-6))
    lo, hi = img.min(), img.max()
    return 0.2 + 0.6 * (img - lo) / max(hi - lo, 1e-9)


def _degrade(base: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    g = base.copy()
    g = 0.5 + (g - 0.5) * (0.5 + 0.2 * rng.random())        # contrast squeeze
    luma = g @ np.array([0.299, 0.587, 0.114])
    sat = 0.4 + 0.2 * rng.random()
    g = luma[:, :, None] * (1 - sat) + g * sat              # desaturate
    g = np.clip(g, 0.0, 1.0) ** (1.2 + 0.4 * rng.random())  # gamma darken
    tint = 1.0 + (rng.random(3) - 0.5) * 0.08               # white-balance tint
    return np.clip(g * tint, 0.0, 1.0)


_LUMA = np.array([0.299, 0.587, 0.114])


def _enhance(base: np.ndarray, preset: dict) -> np.ndarray:
    """Expert rendition with score-decoupled knobs: contrast stretches luma
    only (chroma untouched), saturation scales chroma around luma, warmth
    tints the white balance, and brightness is an achromatic shift."""
    g = base.copy()
    luma = g @ _LUMA
    g = g + ((0.5 + (luma - 0.5) * preset["contrast"]) - luma)[:, :, None]
    luma = g @ _LUMA
    g = luma[:, :, None] + (g - luma[:, :, None]) * preset["saturation"]
    w = preset["warmth"]
    g = g * np.array([1.0 + w, 1.0, 1.0 - w])
    g = g + preset["shift"]
    return np.clip(g, 0.0, 1.0)


# low / mid / high levels per style knob.  Each group assigns the three
# levels of every knob to the three experts through independent random
# permutations, so the per-attribute labels decorrelate across attributes
# (an expert who is the most colorful is not automatically the punchiest),
# which is what lets conditioning learn separated controls.
_STYLE_LEVELS = {
    "contrast": (0.82, 1.18, 1.55),
    "saturation": (0.80, 1.12, 1.45),
    "warmth": (-0.10, 0.0, 0.10),
    "shift": (-0.09, 0.0, 0.09),
}


def _quantize(a: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(a, 0.0, 1.0) * 255.0) / 255.0


# generation-time label margins: CCT gaps are absolute Kelvin (its ordering
# is only approximately scale-equivariant through the sRGB EOTF, so the gap
# must dominate any rescale differential); the other scores are exactly
# scale-equivariant and only need to beat 8-bit quantization noise
CCT_VALID_RANGE = (1500.0, 40000.0)
CCT_MIN_GAP_K = 400.0
RELATIVE_MIN_GAP = 0.02


def _group_scores_ok(input_arr, gt_arrs, opts: ScoreOptions) -> bool:
    """Well-separated extremes per attribute across GTs (post-quantization),
    in-range CCTs, and the degraded input strictly below every GT on
    contrast."""
    from .attributes import contrast as contrast_score
    from .attributes import score_vector as sv

    try:
        table = np.stack([sv(Image(_quantize(a)), opts).as_array() for a in gt_arrs])
        in_contrast = contrast_score(Image(_quantize(input_arr)), opts)
    except ScoreDomainError:
        return False
    if table[:, 2].min() < CCT_VALID_RANGE[0] or table[:, 2].max() > CCT_VALID_RANGE[1]:
        return False
    for i in range(4):
        col = np.sort(table[:, i])
        gap = min(col[1] - col[0], col[-1] - col[-2])
        if i == 2:
            if gap < CCT_MIN_GAP_K:
                return False
        elif gap < RELATIVE_MIN_GAP * max(abs(col[-1]), 1e-9):
            return False
    if in_contrast >= table[:, 1].min():
        return False
    return True


def synth_dataset(
    seed: int,
    n_groups: int,
    out_dir,
    size: int = 64,
    opts: ScoreOptions = ScoreOptions(),
) -> Path:
    """Generate a multi-expert dataset; returns the manifest path.

    Every group carries one degraded input and three expert renditions whose
    attribute scores have a unique max and min per attribute (presets are
    re-jittered on collision), so condition construction is non-degenerate.
    """
    if n_groups < 1:
        raise ValueError("need at least one group")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    groups = []
    experts = ("a", "b", "c")
    for gi in range(n_groups):
        base = _base_image(rng, size)
        input_arr = _degrade(base, rng)
        for attempt in range(40):
            jitter = 0.08
            perms = {k: rng.permutation(3) for k in _STYLE_LEVELS}
            gts = []
            for e in range(3):
                p = {}
                for k, levels in _STYLE_LEVELS.items():
                    v = levels[perms[k][e]]
                    if k == "warmth":
                        p[k] = v + jitter * 0.3 * (rng.random() - 0.5)
                    else:
                        p[k] = v * (1.0 + jitter * (rng.random() - 0.5))
                gts.append(_enhance(base, p))
            if _group_scores_ok(input_arr, gts, opts):
                break
        else:
            raise TrainingError(f"could not spread attribute scores for group {gi}")
        in_path = out_dir / "images" / f"g{gi:04d}_input.png"
        save_image(Image(_quantize(input_arr)), in_path)
        refs = []
        for e, arr in zip(experts, gts):
            p = out_dir / "images" / f"g{gi:04d}_{e}.png"
            save_image(Image(_quantize(arr)), p)
            refs.append(GroundTruthRef(expert=e, path=p))
        groups.append(RetouchGroup(input_path=in_path, gts=tuple(refs)))
    manifest = out_dir / "manifest.json"
    save_manifest(groups, manifest)
    return manifest


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, config JSON, shape table, float32 LE payload.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"GTCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: GridTouchModel, path) -> None:
    cfg_json = json.dumps(asdict(model.cfg)).encode("utf-8")
    entries = []
    blobs = []
    for name, p in model.named_parameters():
        data = p.detach().numpy().astype("<f4")
        nb = name.encode("utf-8")
        dims = data.shape
        entries.append(
            struct.pack("<H", len(nb)) + nb + struct.pack("<B", len(dims))
            + b"".join(struct.pack("<I", d) for d in dims)
        )
        blobs.append(data.tobytes())
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    out += struct.pack("<I", len(cfg_json)) + cfg_json
    out += struct.pack("<I", len(entries))
    for e in entries:
        out += e
    for b in blobs:
        out += b
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> GridTouchModel:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise TrainingError("not a checkpoint file (bad magic)")
    off = 4
    (version,) = struct.unpack_from("<I", buf, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise TrainingError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", buf, off)
    off += 4
    cfg = ModelConfig(**json.loads(buf[off : off + cfg_len].decode("utf-8")))
    off += cfg_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    shapes = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        dims = struct.unpack_from(f"<{ndim}I", buf, off) if ndim else ()
        off += 4 * ndim
        shapes.append((name, dims))
    model = GridTouchModel(cfg)
    params = dict(model.named_parameters())
    with torch.no_grad():
        for name, dims in shapes:
            n = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(buf, dtype="<f4", count=n, offset=off)
            off += 4 * n
            if name not in params:
                raise TrainingError(f"unknown parameter {name} in checkpoint")
            params[name].copy_(
                torch.tensor(data.astype(np.float64).reshape(dims or ()))
            )
    return model


# ---------------------------------------------------------------------------
# The optimizer loop.
# ---------------------------------------------------------------------------


def load_pairs_from_manifest(
    manifest_path, cfg_model: ModelConfig, opts: ScoreOptions = ScoreOptions()
) -> list[dict]:
    """Load groups, build conditions, and preload arrays for training."""
    from .conditioning import load_manifest

    groups = load_manifest(manifest_path)
    L = cfg_model.latent_size
    pairs = []
    for g in groups:
        cond = build_conditions(g, opts)
        rin = load_image(g.input_path)
        rin_small = resize(rin, L, L)
        for ref in g.gts:
            gt = load_image(ref.path)
            if gt.arr.shape != rin.arr.shape:
                raise TrainingError("input and ground truth dimensions differ")
            pairs.append(
                {
                    "input": rin.arr,
                    "gt": gt.arr,
                    "input_resized": rin_small.arr,
                    "gt_resized": resize(gt, L, L).arr,
                    "c": cond[ref.expert],
                    "expert": ref.expert,
                    "input_path": str(g.input_path),
                    "gt_path": str(ref.path),
                }
            )
    return pairs


def fit(
    manifest_path,
    cfg: TrainConfig,
    out_dir,
    model_cfg: ModelConfig | None = None,
    score_opts: ScoreOptions = ScoreOptions(),
    resume: str | Path | None = None,
    verbose: bool = False,
) -> tuple[GridTouchModel, list[dict]]:
    """Train on a manifest; writes checkpoint.bin and train_log.jsonl."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_cfg = model_cfg or ModelConfig()
    schedule = make_schedule_for(model_cfg)
    pairs = load_pairs_from_manifest(manifest_path, model_cfg, score_opts)
    if not pairs:
        raise TrainingError("manifest contains no training pairs")

    rng = np.random.default_rng(cfg.seed)
    if resume is not None:
        model = load_checkpoint(resume)
    else:
        model = GridTouchModel(model_cfg)
        init_parameters(model, rng)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

    log: list[dict] = []
    log_path = out_dir / "train_log.jsonl"
    ckpt_path = out_dir / "checkpoint.bin"
    skipped_total = 0
    with log_path.open("w") as lf:
        for epoch in range(cfg.epochs):
            epoch_cfg = cfg
            in_warmup = epoch < cfg.cl_warmup_epochs
            if in_warmup:
                epoch_cfg = replace(cfg, lambda_cl=0.0)
            if cfg.cl_learning_rate is not None and not in_warmup:
                lr = cfg.cl_learning_rate
            else:
                span = cfg.cl_warmup_epochs if cfg.cl_learning_rate is not None else cfg.epochs
                frac = cfg.lr_final_fraction
                if frac < 1.0 and span > 1:
                    cosine = 0.5 * (1.0 + math.cos(math.pi * epoch / (span - 1)))
                    lr = cfg.learning_rate * (frac + (1.0 - frac) * cosine)
                else:
                    lr = cfg.learning_rate
            for group in opt.param_groups:
                group["lr"] = lr
            order = rng.permutation(len(pairs))
            sums = {"l_rec": 0.0, "l_cl": 0.0, "total": 0.0, "l_pixel": 0.0}
            nb = 0
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                batch = make_batch(pairs, idx, schedule, model_cfg, rng)
                model.zero_grad(set_to_none=True)
                total, breakdown = step_loss(model, batch, epoch_cfg, schedule, score_opts)
                if not math.isfinite(breakdown.total):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}: {breakdown}"
                    )
                total.backward()
                opt.step()
                skipped_total += breakdown.skipped
                sums["l_rec"] += breakdown.l_rec
                sums["l_cl"] += breakdown.l_cl
                sums["total"] += breakdown.total
                sums["l_pixel"] += breakdown.l_pixel
                nb += 1
            rec = {
                "epoch": epoch,
                "l_rec": sums["l_rec"] / nb,
                "l_cl": sums["l_cl"] / nb,
                "total": sums["total"] / nb,
                "l_pixel": sums["l_pixel"] / nb,
            }
            log.append(rec)
            lf.write(json.dumps(rec) + "\n")
            lf.flush()
            if verbose and (epoch % 10 == 0 or epoch == cfg.epochs - 1):
                print(
                    f"epoch {epoch:4d}  l_rec {rec['l_rec']:.5f}  l_cl {rec['l_cl']:.5f}"
                )
    if skipped_total and verbose:
        print(f"skipped {skipped_total} cct-singular batch elements")
    save_checkpoint(model, ckpt_path)
    return model, log


def make_schedule_for(cfg: ModelConfig) -> NoiseSchedule:
    from .diffusion import make_schedule

    return make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)
