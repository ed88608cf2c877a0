"""Per-pixel confidence maps, semantic-edge smoothing and the exit rule.

A prediction's per-pixel confidence map is reduced to one per-image
value: the fraction of pixels whose confidence clears a pixel threshold.
Pixels on semantic edges are naturally under-confident, so an optional
enhancement step replaces their confidence with the median of their
neighbourhood before the reduction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import xlogy

from .errors import DegenerateClassCount, DimMismatch
from .tensorio import LabelMap, PredictionTensor

ESTIMATORS = ("top1", "entropy")


@dataclass(frozen=True)
class ExitThresholds:
    """Per-exit policy knobs: pixel threshold, image threshold, edge smoothing."""

    th_pix: float
    th_img: float
    edge_enhancement: bool = False

    def __post_init__(self):
        if not 0.0 <= self.th_pix <= 1.0:
            raise ValueError(f"th_pix must be in [0, 1], got {self.th_pix}")
        if not 0.0 <= self.th_img <= 1.0:
            raise ValueError(f"th_img must be in [0, 1], got {self.th_img}")


def pixel_confidence_map(pred: PredictionTensor, estimator: str = "top1") -> np.ndarray:
    """Per-pixel confidence in [0, 1]; confident pixels score near 1.

    top1:    the maximum class probability.
    entropy: 1 - H(p)/ln(M), so a uniform distribution scores 0 and a
             one-hot distribution scores 1.
    """
    data = pred.data.astype(np.float64)
    if estimator == "top1":
        return data.max(axis=0)
    if estimator == "entropy":
        m = pred.class_count
        if m < 2:
            raise DegenerateClassCount("entropy confidence needs at least 2 classes")
        p = np.clip(data, 0.0, 1.0)
        h = -xlogy(p, p).sum(axis=0)
        return np.clip(1.0 - h / np.log(m), 0.0, 1.0)
    raise ValueError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")


def semantic_edge_mask(labels: LabelMap, output_stride: int = 1,
                       morphology: str = "widen") -> np.ndarray:
    """Binary mask of class-boundary pixels, widened for coarse exits.

    A pixel is an edge pixel when any 4-neighbour carries a different
    class id, so both sides of a boundary are marked.  The mask is then
    widened (binary dilation) with a square structuring element of side
    `output_stride`; for even sides the square reaches one pixel further
    down-right than up-left (offsets -(s-1)//2 .. s//2).  Pass
    ``morphology="erode"`` for literal erosion, which erases
    one-pixel-thin edges entirely.
    """
    if output_stride < 1:
        raise ValueError("output stride must be >= 1")
    a = labels.data
    edge = np.zeros(a.shape, dtype=bool)
    edge[:-1, :] |= a[:-1, :] != a[1:, :]
    edge[1:, :] |= a[1:, :] != a[:-1, :]
    edge[:, :-1] |= a[:, :-1] != a[:, 1:]
    edge[:, 1:] |= a[:, 1:] != a[:, :-1]
    if output_stride > 1:
        footprint = np.ones((output_stride, output_stride), dtype=bool)
        if morphology == "widen":
            edge = ndimage.binary_dilation(edge, structure=footprint)
        elif morphology == "erode":
            edge = ndimage.binary_erosion(edge, structure=footprint)
        else:
            raise ValueError(f"unknown morphology {morphology!r}")
    return edge.astype(np.uint8)


def enhance_confidence_map(cmap: np.ndarray, mask: np.ndarray,
                           output_stride: int = 1) -> np.ndarray:
    """Median-smooth the confidence of masked pixels.

    Each masked pixel takes the lower median of the original map over a
    (4*os+1) x (4*os+1) window clamped to the image; unmasked pixels are
    untouched.  Reading medians from the original map keeps the result
    independent of pixel visiting order.
    """
    cmap = np.asarray(cmap, dtype=np.float64)
    mask = np.asarray(mask)
    if cmap.shape != mask.shape:
        raise DimMismatch(f"confidence map {cmap.shape} vs mask {mask.shape}")
    if output_stride < 1:
        raise ValueError("output stride must be >= 1")
    half = 2 * output_stride
    out = cmap.copy()
    rows, cols = cmap.shape
    for r, c in zip(*np.nonzero(mask)):
        window = cmap[max(0, r - half):min(rows, r + half + 1),
                      max(0, c - half):min(cols, c + half + 1)].ravel()
        k = (window.size - 1) // 2
        out[r, c] = np.partition(window, k)[k]
    return out


def image_confidence(cmap: np.ndarray, th_pix: float) -> float:
    """Fraction of pixels whose confidence is at least `th_pix`."""
    if not 0.0 <= th_pix <= 1.0:
        raise ValueError(f"th_pix must be in [0, 1], got {th_pix}")
    return float(np.mean(np.asarray(cmap) >= th_pix))


def exit_decision(c_img: float, th_img: float,
                  is_last_selected_exit: bool = False) -> bool:
    """True when the sample terminates here: confident enough, or no deeper exit."""
    if not 0.0 <= c_img <= 1.0 or not 0.0 <= th_img <= 1.0:
        raise ValueError("confidence and threshold must be in [0, 1]")
    return bool(is_last_selected_exit or c_img >= th_img)
