"""Segmentation accuracy: confusion matrices, IoU and pixel accuracy."""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from .errors import DimMismatch, EmptyMatrix, OutOfRangeClass
from .tensorio import IGNORE_VALUE, LabelMap

Labels = Union[LabelMap, np.ndarray]


def _label_array(labels: Labels) -> tuple[np.ndarray, int]:
    if isinstance(labels, LabelMap):
        return labels.data, labels.ignore_value
    return np.asarray(labels), IGNORE_VALUE


def confusion_matrix(pred: Labels, gt: Labels, class_count: int) -> np.ndarray:
    """count[g][p] over pixels with gt != ignore; rows = ground truth."""
    pred_arr, _ = _label_array(pred)
    gt_arr, ignore = _label_array(gt)
    if pred_arr.shape != gt_arr.shape:
        raise DimMismatch(f"prediction {pred_arr.shape} vs labels {gt_arr.shape}")
    valid = gt_arr != ignore
    g = gt_arr[valid].astype(np.int64)
    p = pred_arr[valid].astype(np.int64)
    if g.size and (int(g.max()) >= class_count or int(p.max()) >= class_count):
        raise OutOfRangeClass(f"class ids must lie in [0, {class_count})")
    counts = np.bincount(g * class_count + p, minlength=class_count * class_count)
    return counts.reshape(class_count, class_count)


def merge(*matrices: np.ndarray) -> np.ndarray:
    """Sum confusion matrices; dataset metrics come from the merged counts."""
    return np.sum(matrices, axis=0)


def per_class_iou(cm: np.ndarray) -> np.ndarray:
    """IoU per class; NaN for classes absent from both gt and prediction."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    union = cm.sum(axis=1) + cm.sum(axis=0) - tp
    with np.errstate(invalid="ignore"):
        return np.where(union > 0, tp / np.where(union > 0, union, 1), np.nan)


def miou(cm: np.ndarray, exclude_class: Optional[int] = None) -> float:
    """Mean IoU over classes present in gt or prediction.

    `exclude_class` drops one class (typically background) from the mean.
    """
    cm = np.asarray(cm)
    if cm.sum() == 0:
        raise EmptyMatrix("confusion matrix holds no pixels")
    iou = per_class_iou(cm)
    if exclude_class is not None:
        iou = np.delete(iou, exclude_class)
    present = ~np.isnan(iou)
    if not present.any():
        raise EmptyMatrix("no class present after exclusion")
    return float(iou[present].mean())


def pixel_accuracy(cm: np.ndarray, background_class: int) -> float:
    """Pixel accuracy excluding true positives on the background class."""
    cm = np.asarray(cm, dtype=np.int64)
    tp_bg = int(cm[background_class, background_class])
    total = int(cm.sum())
    denom = total - tp_bg
    if denom == 0:
        raise EmptyMatrix("no pixels outside background true positives")
    return (int(np.trace(cm)) - tp_bg) / denom
