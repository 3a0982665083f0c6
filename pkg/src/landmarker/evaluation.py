"""Non-normalized mean Euclidean error and per-part evaluation reports.

Errors are raw pixel distances in the ground-truth frame; no inter-ocular
or bounding-box normalization is applied.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .landmarks import (
    JAW,
    LEFT_BROW,
    LEFT_EYE,
    MOUTH,
    NOSE,
    RIGHT_BROW,
    RIGHT_EYE,
    INNER_51,
    LandmarkSet,
    as_point_array,
)

PART_INDICES = {
    "jaw": JAW,
    "brows": RIGHT_BROW + LEFT_BROW,
    "nose": NOSE,
    "eyes": RIGHT_EYE + LEFT_EYE,
    "mouth": MOUTH,
}


def mean_error(pred, gt, indices=None) -> float:
    """Arithmetic mean of per-point Euclidean distances, in pixels."""
    if isinstance(pred, LandmarkSet) and isinstance(gt, LandmarkSet):
        if (pred.image_width, pred.image_height) != (gt.image_width, gt.image_height):
            raise ValueError(
                f"frame mismatch: {pred.image_width}x{pred.image_height} vs "
                f"{gt.image_width}x{gt.image_height}"
            )
    p = pred.points if isinstance(pred, LandmarkSet) else as_point_array(pred)
    g = gt.points if isinstance(gt, LandmarkSet) else as_point_array(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    if indices is not None:
        p, g = p[list(indices)], g[list(indices)]
    return float(np.linalg.norm(p - g, axis=1).mean())


@dataclass
class ImageEval:
    name: str
    provenance: str
    me68: float
    me51: float
    parts: dict[str, float]


@dataclass
class EvalReport:
    per_image: list[ImageEval] = field(default_factory=list)
    failures: int = 0

    def classes(self) -> list[str]:
        seen = []
        for ev in self.per_image:
            if ev.provenance not in seen:
                seen.append(ev.provenance)
        return seen

    def aggregate(self, provenance: str | None = None) -> dict[str, tuple[float, float]]:
        """mean +- std per metric over non-failed images (optionally one class)."""
        rows = [e for e in self.per_image
                if provenance is None or e.provenance == provenance]
        if not rows:
            raise ValueError(f"no evaluated images for class {provenance!r}")
        out = {}
        for key in ("me68", "me51", *PART_INDICES):
            vals = np.array([
                getattr(e, key) if key in ("me68", "me51") else e.parts[key]
                for e in rows
            ])
            out[key] = (float(vals.mean()), float(vals.std()))
        return out


def evaluate_pairs(preds, gts, names=None, provenances=None) -> EvalReport:
    """Score predictions against ground truth; None predictions count as
    detection failures and are excluded from the aggregates."""
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions for {len(gts)} ground truths")
    if len(gts) == 0:
        raise ValueError("empty evaluation split")
    names = names or [f"image{i:04d}" for i in range(len(gts))]
    provenances = provenances or ["real_painting"] * len(gts)
    report = EvalReport()
    for pred, gt, name, prov in zip(preds, gts, names, provenances):
        if pred is None:
            report.failures += 1
            continue
        report.per_image.append(ImageEval(
            name=name, provenance=prov,
            me68=mean_error(pred, gt),
            me51=mean_error(pred, gt, INNER_51),
            parts={part: mean_error(pred, gt, idx) for part, idx in PART_INDICES.items()},
        ))
    return report


def evaluate_split(dataset, bundle, padding_fraction: float = 0.25,
                   provenances=None, names=None) -> EvalReport:
    """Run the full pipeline over a dataset of (image, LandmarkSet) pairs."""
    from .pipeline import forward_full

    preds, gts = [], []
    for i in range(len(dataset)):
        image, marks = dataset[i]
        try:
            pred = forward_full(bundle, image, padding_fraction).refined_landmarks
        except Exception:
            pred = None
        preds.append(pred)
        gts.append(marks)
    return evaluate_pairs(preds, gts, names=names, provenances=provenances)


def report_csv(report: EvalReport) -> str:
    """Aggregate table: one row per provenance class plus 'all', as CSV."""
    buf = io.StringIO()
    fields = ["class", "n", "failures"]
    for key in ("me68", "me51", *PART_INDICES):
        fields += [f"{key}_mean", f"{key}_std"]
    writer = csv.DictWriter(buf, fieldnames=fields)
    writer.writeheader()
    groups = [None] + report.classes() if len(report.classes()) > 1 else [None]
    for prov in groups:
        agg = report.aggregate(prov)
        row = {
            "class": prov or "all",
            "n": sum(1 for e in report.per_image
                     if prov is None or e.provenance == prov),
            "failures": report.failures if prov is None else "",
        }
        for key, (mean, std) in agg.items():
            row[f"{key}_mean"] = f"{mean:.2f}"
            row[f"{key}_std"] = f"{std:.2f}"
        writer.writerow(row)
    return buf.getvalue()


def per_image_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["name", "class", "me68", "me51", *PART_INDICES])
    for e in report.per_image:
        writer.writerow([e.name, e.provenance, f"{e.me68:.4f}", f"{e.me51:.4f}",
                         *(f"{e.parts[p]:.4f}" for p in PART_INDICES)])
    return buf.getvalue()


def format_table(report: EvalReport) -> str:
    """Rendered text table, two decimals, mean +- std per cell."""
    cols = ["me68", "me51", *PART_INDICES]
    lines = []
    header = f"{'class':<22}" + "".join(f"{c:>16}" for c in cols) + f"{'n':>6}{'fail':>6}"
    lines.append(header)
    lines.append("-" * len(header))
    groups = report.classes() or []
    for prov in ([None] + groups if len(groups) > 1 else [None]):
        agg = report.aggregate(prov)
        n = sum(1 for e in report.per_image if prov is None or e.provenance == prov)
        cells = "".join(
            f"{agg[c][0]:>8.2f}+-{agg[c][1]:<6.2f}" for c in cols
        )
        fail = report.failures if prov is None else ""
        lines.append(f"{(prov or 'all'):<22}{cells}{n:>6}{str(fail):>6}")
    return "\n".join(lines)
