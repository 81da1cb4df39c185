"""Image-condition pair construction from groups of expert-retouched ground
truths, plus the JSON manifest / JSONL pairs file formats.

Labeling rule: per attribute, the ground truth with the highest score gets
coefficient +1, the lowest gets -1, everything else 0.  Ties break by expert
order in the manifest (first wins); if the max and the min land on the same
ground truth (single-GT groups, or all scores tied) the labels cancel and
that attribute stays 0 for everyone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attributes import ScoreOptions, ScoreVector, score_vector
from .imagecore import Image, load_image


class ConditioningError(ValueError):
    """Bad manifest or group structure."""


@dataclass(frozen=True)
class GroundTruthRef:
    expert: str
    path: Path


@dataclass(frozen=True)
class RetouchGroup:
    """One degraded input and its expert-retouched ground truths."""

    input_path: Path
    gts: tuple[GroundTruthRef, ...]

    def __post_init__(self):
        if len(self.gts) < 1:
            raise ConditioningError("group needs at least one ground truth")
        experts = [g.expert for g in self.gts]
        if len(set(experts)) != len(experts):
            raise ConditioningError(f"duplicate expert ids in group: {experts}")


def validate_condition(c, extended: bool = False) -> np.ndarray:
    """Check a condition vector: 4 finite components, |c_i| <= 1 (3 extended)."""
    a = np.asarray(c, dtype=np.float64)
    if a.shape != (4,):
        raise ConditioningError("condition vector must have 4 components")
    if not np.isfinite(a).all():
        raise ConditioningError("condition components must be finite")
    bound = 3.0 if extended else 1.0
    if np.abs(a).max() > bound + 1e-12:
        raise ConditioningError(f"condition components must lie in [-{bound:g}, {bound:g}]")
    return a


def conditions_from_scores(
    scored: Sequence[tuple[str, ScoreVector]]
) -> dict[str, np.ndarray]:
    """Apply the +1/-1/0 labeling rule to already-computed score vectors."""
    experts = [e for e, _ in scored]
    if len(set(experts)) != len(experts):
        raise ConditioningError(f"duplicate expert ids: {experts}")
    table = np.stack([s.as_array() for _, s in scored])  # (n_experts, 4)
    cond = {e: np.zeros(4) for e in experts}
    for i in range(4):
        col = table[:, i]
        imax = int(np.argmax(col))  # argmax/argmin return the first hit: ties
        imin = int(np.argmin(col))  # break toward manifest order
        if imax != imin:
            cond[experts[imax]][i] = 1.0
            cond[experts[imin]][i] = -1.0
    return cond


def build_conditions(
    group: RetouchGroup, opts: ScoreOptions = ScoreOptions()
) -> dict[str, np.ndarray]:
    """Score every ground truth in the group and label it."""
    scored = [(g.expert, score_vector(load_image(g.path), opts)) for g in group.gts]
    return conditions_from_scores(scored)


# ---------------------------------------------------------------------------
# Manifest: {"groups": [{"input": p, "gts": [{"expert": "A", "path": p}]}]}
# Relative paths resolve against the manifest file's directory.
# ---------------------------------------------------------------------------


def load_manifest(path) -> list[RetouchGroup]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConditioningError(f"invalid manifest JSON: {exc}") from exc
    root = path.parent

    def resolve(p: str) -> Path:
        q = Path(p)
        q = q if q.is_absolute() else root / q
        if not q.exists():
            raise ConditioningError(f"manifest references missing file: {q}")
        return q

    groups = []
    for g in doc.get("groups", []):
        gts = tuple(
            GroundTruthRef(expert=str(e["expert"]), path=resolve(e["path"]))
            for e in g["gts"]
        )
        groups.append(RetouchGroup(input_path=resolve(g["input"]), gts=gts))
    return groups


def save_manifest(groups: Sequence[RetouchGroup], path) -> None:
    """Write a manifest; paths are stored relative to the manifest directory
    when possible."""
    path = Path(path)
    root = path.parent.resolve()

    def rel(p: Path) -> str:
        try:
            return str(Path(p).resolve().relative_to(root))
        except ValueError:
            return str(p)

    doc = {
        "groups": [
            {
                "input": rel(g.input_path),
                "gts": [{"expert": t.expert, "path": rel(t.path)} for t in g.gts],
            }
            for g in groups
        ]
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def emit_pairs(
    groups: Sequence[RetouchGroup], out_path, opts: ScoreOptions = ScoreOptions()
) -> int:
    """Write one JSONL record per (input, GT, condition) triple; returns the
    record count."""
    out_path = Path(out_path)
    n = 0
    with out_path.open("w") as fh:
        for g in groups:
            cond = build_conditions(g, opts)
            for t in g.gts:
                rec = {
                    "input": str(g.input_path),
                    "gt": str(t.path),
                    "expert": t.expert,
                    "c": [float(v) for v in cond[t.expert]],
                }
                fh.write(json.dumps(rec) + "\n")
                n += 1
    return n


def load_pairs(path) -> list[dict]:
    recs = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                recs.append(json.loads(line))
    return recs
