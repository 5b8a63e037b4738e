"""Segmentation quality metrics and the upsampler artifact diagnostic."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError

# Composite evaluation regions over internal labels
# (0 background, 1 necrotic/non-enhancing core, 2 edema, 3 enhancing).
REGIONS: dict[str, tuple[int, ...]] = {
    "WT": (1, 2, 3),
    "TC": (1, 3),
    "ET": (3,),
}


def dsc(pred: np.ndarray, gt: np.ndarray) -> float:
    """Dice similarity 2|X n Y| / (|X| + |Y|) of two binary masks.

    Two empty masks count as perfect agreement (1.0).
    """
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    pred = pred.astype(bool)
    gt = gt.astype(bool)
    inter = int(np.logical_and(pred, gt).sum())
    size = int(pred.sum()) + int(gt.sum())
    if size == 0:
        return 1.0
    return 2.0 * inter / size


@dataclass(frozen=True)
class DiceReport:
    per_region: dict[str, float]
    mean: float
    counts: dict[str, tuple[int, int, int]]  # |X|, |Y|, |X n Y|

    def as_dict(self) -> dict:
        return {"per_region": dict(self.per_region), "mean": self.mean,
                "counts": {k: list(v) for k, v in self.counts.items()}}


def region_dice(pred_labels: np.ndarray, gt_labels: np.ndarray) -> DiceReport:
    """Per-region Dice (WT, TC, ET) and their arithmetic mean."""
    if pred_labels.shape != gt_labels.shape:
        raise ShapeError(f"label shapes differ: {pred_labels.shape} vs {gt_labels.shape}")
    for name, arr in (("prediction", pred_labels), ("ground truth", gt_labels)):
        vals = np.unique(arr)
        if vals.size and (vals.min() < 0 or vals.max() > 3):
            raise DataError(f"{name} holds labels outside 0..3: {sorted(int(v) for v in vals)}")
    per = {}
    counts = {}
    for region, labels in REGIONS.items():
        pm = np.isin(pred_labels, labels)
        gm = np.isin(gt_labels, labels)
        per[region] = dsc(pm, gm)
        counts[region] = (int(pm.sum()), int(gm.sum()), int(np.logical_and(pm, gm).sum()))
    return DiceReport(per, float(np.mean(list(per.values()))), counts)


def checkerboard_phase_disparity(volume: np.ndarray, factor: int) -> float:
    """Phase-mean disparity of a single-channel volume at stride ``factor``.

    Voxels are grouped into factor^3 classes by coordinate residues; the
    result is mean_phase |mu_phase - mu| / sigma, zero for a flat volume.
    A strided transposed convolution that weights its kernel taps unevenly
    shows up as distinct phase means (the checkerboard pattern).
    """
    if volume.ndim != 3:
        raise ShapeError(f"expected a single-channel (D,H,W) volume, got rank {volume.ndim}")
    d, h, w = volume.shape
    if any(s % factor for s in (d, h, w)):
        raise ShapeError(f"dims {volume.shape} not divisible by phase factor {factor}")
    v = volume.astype(np.float64)
    if v.max() == v.min():
        return 0.0
    blocks = v.reshape(d // factor, factor, h // factor, factor, w // factor, factor)
    phase_means = blocks.mean(axis=(0, 2, 4))  # (factor, factor, factor)
    mu = v.mean()
    sigma = v.std()
    if sigma == 0.0:
        return 0.0
    return float(np.abs(phase_means - mu).mean() / sigma)


def study_entry(study_id: str, report: DiceReport, model_version: int) -> dict:
    return {
        "study": study_id,
        "dice": {k: report.per_region[k] for k in ("WT", "TC", "ET")},
        "mean": report.mean,
        "model_version": model_version,
    }


def write_eval_report(path, entries: list[dict]) -> None:
    """One JSON object per study, one per line."""
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write(json.dumps(e, sort_keys=True) + "\n")


def read_eval_report(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
