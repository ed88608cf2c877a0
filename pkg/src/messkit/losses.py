"""Forward-only evaluators for the two multi-exit training losses.

These evaluate loss values on exported softmax predictions; there is no
gradient machinery.  Probabilities are clamped to [1e-12, 1] inside
logarithms because float32 exports can contain exact zeros.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import rel_entr

from .errors import DimMismatch, EmptySelection
from .tensorio import LabelMap, PredictionTensor

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class LossReport:
    """Total plus the per-exit contributions that sum to it.

    Each term is (exit_id, ce_contribution, kl_contribution), already
    weighted, so ``total == sum(ce + kl for all terms)``.
    """

    total: float
    per_exit_terms: tuple[tuple[int, float, float], ...]
    active_exit_set: tuple[int, ...]


def _check_dims(pred: PredictionTensor, gt: LabelMap) -> None:
    if (pred.rows, pred.cols) != (gt.rows, gt.cols):
        raise DimMismatch(
            f"prediction {(pred.rows, pred.cols)} vs labels {(gt.rows, gt.cols)}"
        )


def cross_entropy(pred: PredictionTensor, gt: LabelMap,
                  pixel_mask: Optional[np.ndarray] = None) -> float:
    """Mean of -ln p[gt] over non-ignored (and mask-selected) pixels."""
    _check_dims(pred, gt)
    select = gt.data != gt.ignore_value
    if pixel_mask is not None:
        mask = np.asarray(pixel_mask)
        if mask.shape != gt.data.shape:
            raise DimMismatch(f"pixel mask {mask.shape} vs labels {gt.data.shape}")
        select = select & (mask != 0)
    rows, cols = np.nonzero(select)
    if rows.size == 0:
        raise EmptySelection("no pixel selected for cross entropy")
    classes = gt.data[rows, cols].astype(np.int64)
    p = pred.data[classes, rows, cols].astype(np.float64)
    return float(np.mean(-np.log(np.clip(p, PROB_CLAMP, 1.0))))


def kl_divergence(student: PredictionTensor, teacher: PredictionTensor,
                  reverse: bool = False) -> float:
    """Mean per-pixel KL(teacher || student); `reverse` swaps the direction."""
    if student.data.shape != teacher.data.shape:
        raise DimMismatch(
            f"student {student.data.shape} vs teacher {teacher.data.shape}"
        )
    t = teacher.data.astype(np.float64)
    s = student.data.astype(np.float64)
    if reverse:
        t, s = s, t
    per_pixel = rel_entr(t, np.clip(s, PROB_CLAMP, 1.0)).sum(axis=0)
    return float(per_pixel.mean())


def pretrain_loss(preds: Sequence[PredictionTensor], gt: LabelMap,
                  batch_index: int, round_robin: bool = False) -> LossReport:
    """Exit-dropout loss: schedule-gated early-exit CE terms plus the final CE.

    The printed schedule activates early exit i on batch j when j mod i
    is 0, i.e. every divisor of j; `round_robin` switches to the
    one-early-exit-per-batch cycle 1, 2, ..., N-1, 1, ...
    """
    n = len(preds)
    if n < 2:
        raise ValueError("need at least two exits")
    if batch_index < 1:
        raise ValueError("batch_index starts at 1")
    if round_robin:
        active_early = [(batch_index - 1) % (n - 1) + 1]
    else:
        active_early = [i for i in range(1, n) if batch_index % i == 0]
    active = active_early + [n]
    terms = []
    for i in active:
        ce = cross_entropy(preds[i - 1], gt)
        terms.append((i, ce, 0.0))
    total = float(sum(ce for _, ce, _ in terms))
    return LossReport(total, tuple(terms), tuple(active))


def pfd_loss(preds: Sequence[PredictionTensor], gt: LabelMap, alpha: float = 0.5,
             include_final: bool = True, reverse_kl: bool = False) -> LossReport:
    """Positive filtering distillation loss.

    Per exit: alpha * CE restricted to pixels the final exit predicts
    correctly, plus (1 - alpha) * KL against the final exit.  An empty
    correct-pixel set contributes zero CE.  As printed the sum includes
    the final exit itself (whose KL term is zero); `include_final=False`
    drops that degenerate term.
    """
    n = len(preds)
    if n < 2:
        raise ValueError("need at least two exits")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    final = preds[-1]
    _check_dims(final, gt)
    correct = (final.argmax_labels().data == gt.data) & (gt.data != gt.ignore_value)
    exits = range(1, n + 1) if include_final else range(1, n)
    terms = []
    for i in exits:
        try:
            ce = cross_entropy(preds[i - 1], gt, pixel_mask=correct)
        except EmptySelection:
            ce = 0.0
        kl = kl_divergence(preds[i - 1], final, reverse=reverse_kl)
        terms.append((i, alpha * ce, (1.0 - alpha) * kl))
    total = float(sum(ce + kl for _, ce, kl in terms))
    return LossReport(total, tuple(terms), tuple(exits))
