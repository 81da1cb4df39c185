"""Quantitative harness: PSNR, the per-attribute adjustable-range /
decoupling report, the step-count sweep, and the intermediate-trace dump.

The adjustable-range report sweeps one coefficient c_i from +1 to -1 (others
zero, shared seed per pair) and records the mean absolute score change
|delta s_j| over a fixed set of evaluation inputs.  Raw entries carry each
attribute's own units (Kelvin for color temperature), so the decoupling
check normalizes every column by its diagonal response before comparing:
with that normalization "diagonal dominates its row" and "sweeping c_j moves
s_j more than any other sweep does" are the same statement.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attributes import ScoreOptions, score_vector
from .bilateral import save_grid
from .diffusion import GridTouchModel, sample
from .imagecore import Image, save_image

PSNR_CAP_DB = 99.0

# synth_dataset seed for the pinned 16-image evaluation set
EVAL_SET_SEED = 16
EVAL_SET_SIZE = 16


class EvalError(ValueError):
    pass


def psnr(a: Image, b: Image) -> float:
    """10 log10(1 / MSE) with peak 1.0; +inf for identical images."""
    if a.arr.shape != b.arr.shape:
        raise EvalError(f"psnr dims differ: {a.arr.shape} vs {b.arr.shape}")
    mse = float(np.mean((a.arr - b.arr) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def psnr_capped(a: Image, b: Image) -> float:
    """PSNR with the +inf sentinel capped at 99 dB (JSON-safe)."""
    return min(psnr(a, b), PSNR_CAP_DB)


@dataclass
class RangeReport:
    """4x4 adjustable-range matrix: raw[i, j] = mean |delta s_j| when c_i
    sweeps +1 -> -1."""

    raw: np.ndarray

    def normalized(self) -> np.ndarray:
        """Each column divided by its diagonal entry (unit-free)."""
        out = np.zeros_like(self.raw)
        for j in range(4):
            d = self.raw[j, j]
            out[:, j] = self.raw[:, j] / d if d > 0 else np.inf
        return out

    def decoupled(self) -> bool:
        """True when every row's diagonal beats its off-diagonal entries in
        the normalized matrix (equivalently: sweeping c_j moves s_j more than
        any other sweep does)."""
        if np.any(self.raw[np.arange(4), np.arange(4)] <= 0):
            return False
        norm = self.normalized()
        for i in range(4):
            for j in range(4):
                if i != j and norm[i, j] >= norm[i, i]:
                    return False
        return True

    def to_dict(self) -> dict:
        return {
            "raw": self.raw.tolist(),
            "normalized": self.normalized().tolist(),
            "decoupled": self.decoupled(),
        }


def adjustable_range_row(
    model: GridTouchModel,
    inputs: Sequence[Image],
    attribute: int,
    n_steps: int = 20,
    seed: int = 0,
    opts: ScoreOptions = ScoreOptions(),
) -> np.ndarray:
    """Mean |delta s_j| over inputs for c_attribute = +1 vs -1 (1-based)."""
    if attribute not in (1, 2, 3, 4):
        raise EvalError("attribute index must be in 1..4")
    deltas = []
    for idx, img in enumerate(inputs):
        pair_seed = seed + idx  # same seed for both signs of the sweep
        c_hi = np.zeros(4)
        c_hi[attribute - 1] = 1.0
        hi = sample(model, img, c_hi, n_steps=n_steps, seed=pair_seed)
        lo = sample(model, img, -c_hi, n_steps=n_steps, seed=pair_seed)
        s_hi = score_vector(hi.image, opts).as_array()
        s_lo = score_vector(lo.image, opts).as_array()
        deltas.append(np.abs(s_hi - s_lo))
    return np.mean(deltas, axis=0)


def range_report(
    model: GridTouchModel,
    inputs: Sequence[Image],
    n_steps: int = 20,
    seed: int = 0,
    opts: ScoreOptions = ScoreOptions(),
) -> RangeReport:
    rows = [
        adjustable_range_row(model, inputs, i, n_steps=n_steps, seed=seed, opts=opts)
        for i in (1, 2, 3, 4)
    ]
    return RangeReport(raw=np.stack(rows))


def eval_inputs_from_manifest(manifest_path, limit: int | None = None) -> list[Image]:
    from .conditioning import load_manifest
    from .imagecore import load_image

    groups = load_manifest(manifest_path)
    if limit is not None:
        groups = groups[:limit]
    return [load_image(g.input_path) for g in groups]


def make_eval_set(out_dir, size: int = 64) -> list[Image]:
    """The pinned 16-image evaluation set used for range averaging."""
    from .training import synth_dataset

    manifest = synth_dataset(EVAL_SET_SEED, EVAL_SET_SIZE, out_dir, size=size)
    return eval_inputs_from_manifest(manifest)


def step_sweep(
    model: GridTouchModel,
    image: Image,
    c,
    steps_list: Sequence[int],
    seed: int = 0,
    out_dir=None,
    opts: ScoreOptions = ScoreOptions(),
) -> list[dict]:
    """One sample per step count, shared seed; optionally writes PNGs+JSON."""
    entries = []
    for n in steps_list:
        res = sample(model, image, c, n_steps=int(n), seed=seed)
        try:
            scores = score_vector(res.image, opts).to_dict()
        except Exception:
            scores = None
        entry = {"steps": int(n), "image": res.image, "scores": scores, "seed": seed}
        entries.append(entry)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        summary = []
        for e in entries:
            name = f"sweep_{e['steps']:04d}.png"
            save_image(e["image"], out_dir / name)
            summary.append({"steps": e["steps"], "image": name, "scores": e["scores"]})
        (out_dir / "sweep.json").write_text(json.dumps(summary, indent=2) + "\n")
    return entries


def trace_dump(
    model: GridTouchModel,
    image: Image,
    c,
    n_steps: int = 20,
    seed: int = 0,
    out_dir="trace",
) -> dict:
    """Write every intermediate D_t as PNG plus its grid binary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    res = sample(model, image, c, n_steps=n_steps, seed=seed, trace=True)
    files = []
    for i, entry in enumerate(res.trace):
        img_name = f"step_{i:04d}_t{entry.t:04d}.png"
        grid_name = f"step_{i:04d}_t{entry.t:04d}.abg"
        save_image(entry.image, out_dir / img_name)
        save_grid(entry.grid, out_dir / grid_name)
        files.append({"t": entry.t, "image": img_name, "grid": grid_name})
    final_name = "final.png"
    save_image(res.image, out_dir / final_name)
    manifest = {"seed": seed, "steps": files, "final": final_name}
    (out_dir / "trace.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def psnr_gain(
    model: GridTouchModel,
    manifest_path,
    n_steps: int = 20,
    seed: int = 0,
    opts: ScoreOptions = ScoreOptions(),
    limit: int | None = None,
) -> dict:
    """Mean PSNR(output | GT condition, GT) against the input baseline.

    For every (input, GT) pair the model samples with that GT's constructed
    condition; the baseline is PSNR(input, GT).
    """
    from .conditioning import build_conditions, load_manifest
    from .imagecore import load_image

    groups = load_manifest(manifest_path)
    if limit is not None:
        groups = groups[:limit]
    out_vals, base_vals = [], []
    k = 0
    for g in groups:
        cond = build_conditions(g, opts)
        rin = load_image(g.input_path)
        for ref in g.gts:
            gt = load_image(ref.path)
            res = sample(model, rin, cond[ref.expert], n_steps=n_steps, seed=seed + k)
            out_vals.append(psnr_capped(res.image, gt))
            base_vals.append(psnr_capped(rin, gt))
            k += 1
    return {
        "mean_output_psnr": float(np.mean(out_vals)),
        "mean_input_psnr": float(np.mean(base_vals)),
        "gain_db": float(np.mean(out_vals) - np.mean(base_vals)),
        "pairs": len(out_vals),
    }
