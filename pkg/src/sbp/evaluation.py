"""Detection precision/recall/F-score and mask IoU."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .geometry import polygon_bounds, polygon_iou

MATCH_IOU = 0.5


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    fscore: float
    matched: int
    num_pred: int
    num_gt: int

    @classmethod
    def from_counts(cls, matched: int, num_pred: int, num_gt: int) -> "PRF":
        p = matched / num_pred if num_pred else 0.0
        r = matched / num_gt if num_gt else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f, matched, num_pred, num_gt)

    def to_json(self) -> dict:
        return asdict(self)


def _bbox_overlap(a, b) -> bool:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


def iou_matrix(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> np.ndarray:
    out = np.zeros((len(preds), len(gts)))
    pb = [polygon_bounds(np.asarray(p, dtype=np.float64)) for p in preds]
    gb = [polygon_bounds(np.asarray(g, dtype=np.float64)) for g in gts]
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            if _bbox_overlap(pb[i], gb[j]):
                out[i, j] = polygon_iou(p, g)
    return out


def greedy_match(ious: np.ndarray, iou_thresh: float = MATCH_IOU) -> list[tuple[int, int]]:
    """Predictions in input order each take the free GT with the highest IoU."""
    taken = np.zeros(ious.shape[1], dtype=bool)
    pairs = []
    for i in range(ious.shape[0]):
        row = np.where(taken, -1.0, ious[i])
        if row.size == 0:
            break
        j = int(np.argmax(row))
        if row[j] >= iou_thresh:
            taken[j] = True
            pairs.append((i, j))
    return pairs


def match_and_score(preds, gts, iou_thresh: float = MATCH_IOU) -> PRF:
    ious = iou_matrix(preds, gts)
    return PRF.from_counts(len(greedy_match(ious, iou_thresh)), len(preds), len(gts))


def score_dataset(pred_lists, gt_lists, iou_thresh: float = MATCH_IOU) -> PRF:
    """Pool matches over images, then compute P/R/F once."""
    matched = num_pred = num_gt = 0
    for preds, gts in zip(pred_lists, gt_lists, strict=True):
        r = match_and_score(preds, gts, iou_thresh)
        matched += r.matched
        num_pred += r.num_pred
        num_gt += r.num_gt
    return PRF.from_counts(matched, num_pred, num_gt)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def mean_mask_iou(pred_masks, gt_masks) -> float:
    if len(pred_masks) != len(gt_masks):
        raise ValueError("pred and gt mask lists differ in length")
    if not pred_masks:
        return 0.0
    return float(np.mean([mask_iou(p, g) for p, g in zip(pred_masks, gt_masks)]))
