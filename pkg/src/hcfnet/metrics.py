"""Binary segmentation metrics over whole datasets.

``iou_metric`` pools intersection and union pixel counts across every image
before dividing; ``niou_metric`` averages per-image IoU values instead, so
the two agree exactly on single-image datasets.  Predictions are probability
maps binarized at the threshold; ground-truth masks must be strictly binary.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError

__all__ = ["iou_metric", "niou_metric"]


def _stack(pred_probs: Sequence[np.ndarray], gt_masks: Sequence[np.ndarray], threshold: float):
    if len(pred_probs) == 0:
        raise DomainError("metrics need at least one image")
    if len(pred_probs) != len(gt_masks):
        raise ShapeError(
            f"{len(pred_probs)} predictions but {len(gt_masks)} ground-truth masks"
        )
    pairs = []
    for pred, gt in zip(pred_probs, gt_masks):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        if pred.shape != gt.shape:
            raise ShapeError(f"prediction {pred.shape} and mask {gt.shape} differ")
        if not np.all((gt == 0.0) | (gt == 1.0)):
            raise DomainError("ground-truth masks must be exactly 0 or 1")
        pairs.append((pred > threshold, gt > 0.5))
    return pairs


def iou_metric(
    pred_probs: Sequence[np.ndarray],
    gt_masks: Sequence[np.ndarray],
    threshold: float = 0.5,
) -> float:
    """Dataset-pooled intersection over union; 1.0 when everything is empty."""
    tp = t = p = 0
    for pred, gt in _stack(pred_probs, gt_masks, threshold):
        tp += int(np.sum(pred & gt))
        t += int(np.sum(gt))
        p += int(np.sum(pred))
    denom = t + p - tp
    return 1.0 if denom == 0 else tp / denom


def niou_metric(
    pred_probs: Sequence[np.ndarray],
    gt_masks: Sequence[np.ndarray],
    threshold: float = 0.5,
) -> float:
    """Mean of per-image IoU; an image empty in both maps contributes 1.0."""
    scores = []
    for pred, gt in _stack(pred_probs, gt_masks, threshold):
        tp = int(np.sum(pred & gt))
        denom = int(np.sum(gt)) + int(np.sum(pred)) - tp
        scores.append(1.0 if denom == 0 else tp / denom)
    return float(np.mean(scores))
