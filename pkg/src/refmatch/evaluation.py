"""Dataset-level segmentation metrics.

mIoU averages the per-reference IoU; oIoU pools intersection and union
pixel counts over all references before dividing. Both are reported as
percentages. Soft predictions are binarized at a threshold (0.5 by
default) before any counting, so already-binary inputs are
threshold-independent. Both reductions are order-free.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import RefmatchError
from .masks import RleMask, SoftMask, rle_decode


@dataclass(frozen=True)
class MetricsReport:
    """oIoU / mIoU in percent plus the per-reference IoUs behind them."""

    oiou: float
    miou: float
    per_reference: Mapping[str, float]  # raw IoU fractions in [0, 1]
    n_references: int
    intersection_pixels: int
    union_pixels: int

    def to_dict(self) -> dict:
        return {
            "oIoU": round(self.oiou, 2),
            "mIoU": round(self.miou, 2),
            "references": self.n_references,
            "intersection_pixels": self.intersection_pixels,
            "union_pixels": self.union_pixels,
            "per_reference_iou": {k: round(v, 6) for k, v in sorted(self.per_reference.items())},
        }


def binarize(mask: RleMask | SoftMask, threshold: float = 0.5) -> np.ndarray:
    """Dense boolean grid; soft masks cut at >= threshold."""
    if isinstance(mask, RleMask):
        return rle_decode(mask).astype(bool)
    return mask.values >= threshold


def evaluate(predictions: Mapping[str, RleMask | SoftMask],
             ground_truth: Mapping[str, RleMask],
             threshold: float = 0.5) -> MetricsReport:
    """Score predictions against per-reference ground-truth masks.

    The reference sets must match exactly. A reference where both masks
    are empty counts as IoU 1.0 and adds nothing to the pooled counts.
    """
    pred_keys = set(predictions)
    gt_keys = set(ground_truth)
    if pred_keys != gt_keys:
        missing = sorted(gt_keys - pred_keys)[:5]
        extra = sorted(pred_keys - gt_keys)[:5]
        raise RefmatchError(
            f"prediction/ground-truth reference sets differ "
            f"(missing: {missing}, extra: {extra})"
        )
    if not predictions:
        raise RefmatchError("cannot evaluate an empty reference set")
    per_reference: dict[str, float] = {}
    inter_total = 0
    union_total = 0
    for ref_id in sorted(predictions):
        pred = binarize(predictions[ref_id], threshold)
        gt = rle_decode(ground_truth[ref_id]).astype(bool)
        if pred.shape != gt.shape:
            raise RefmatchError(
                f"prediction/ground-truth shape mismatch for ref {ref_id!r}: "
                f"{pred.shape} vs {gt.shape}"
            )
        inter = int(np.logical_and(pred, gt).sum())
        union = int(np.logical_or(pred, gt).sum())
        per_reference[ref_id] = 1.0 if union == 0 else inter / union
        inter_total += inter
        union_total += union
    miou = 100.0 * float(np.mean(list(per_reference.values())))
    oiou = 100.0 if union_total == 0 else 100.0 * inter_total / union_total
    return MetricsReport(
        oiou=oiou,
        miou=miou,
        per_reference=per_reference,
        n_references=len(per_reference),
        intersection_pixels=inter_total,
        union_pixels=union_total,
    )


def compare_reports(a: MetricsReport, b: MetricsReport) -> dict:
    """Per-metric deltas (a minus b) with winner flags.

    Both reports must cover the same references.
    """
    if set(a.per_reference) != set(b.per_reference):
        raise RefmatchError("reports cover different reference sets")

    def row(metric: str, va: float, vb: float) -> dict:
        delta = round(va - vb, 2)
        winner = "a" if delta > 0 else ("b" if delta < 0 else "tie")
        return {"metric": metric, "a": round(va, 2), "b": round(vb, 2),
                "delta": delta, "winner": winner}

    return {
        "oIoU": row("oIoU", a.oiou, b.oiou),
        "mIoU": row("mIoU", a.miou, b.miou),
    }
