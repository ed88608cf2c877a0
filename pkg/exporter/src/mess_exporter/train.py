"""Two-stage training for the toy multi-exit model.

Stage 1 trains the backbone end-to-end with a schedule-gated exit
dropout: the final head contributes every batch while early exit i joins
on batches divisible by its rank, keeping the final exit dominant yet
the backbone exit-aware.  Stage 2 freezes the backbone and final head
and fits the early heads alone, either with plain cross-entropy or with
filtered distillation against the frozen final exit.  Jointly training
everything with a plain CE sum is also available (``stage2="joint"``)
but can leave the final exit under-trained at toy scale.
"""

from __future__ import annotations

import torch
from torch.nn import functional as F

from .data import make_split
from .model import ToyMultiExitNet

STAGE2_MODES = ("ce", "pfd", "joint")


def exit_dropout_loss(logits: dict[int, torch.Tensor], labels: torch.Tensor,
                      batch_index: int) -> torch.Tensor:
    """Final-exit CE every batch; early exit of rank i joins when i divides the batch index."""
    points = sorted(logits)
    total = F.cross_entropy(logits[points[-1]], labels)
    for rank, point in enumerate(points[:-1], start=1):
        if batch_index % rank == 0:
            total = total + F.cross_entropy(logits[point], labels)
    return total


def pfd_batch_loss(logits: dict[int, torch.Tensor], labels: torch.Tensor,
                   alpha: float = 0.5) -> torch.Tensor:
    """Filtered-CE plus distillation against the final exit, summed over exits."""
    points = sorted(logits)
    final_probs = F.softmax(logits[points[-1]], dim=1)
    correct = logits[points[-1]].argmax(dim=1) == labels
    total = logits[points[0]].new_zeros(())
    for point in points:
        if correct.any():
            ce = F.cross_entropy(
                logits[point].permute(0, 2, 3, 1)[correct], labels[correct])
        else:
            ce = logits[point].new_zeros(())
        log_student = F.log_softmax(logits[point], dim=1)
        kl = F.kl_div(log_student, final_probs, reduction="none").sum(dim=1).mean()
        total = total + alpha * ce + (1.0 - alpha) * kl
    return total


def plain_ce_loss(logits: dict[int, torch.Tensor], labels: torch.Tensor) -> torch.Tensor:
    return sum(F.cross_entropy(logits[p], labels) for p in sorted(logits))


def _run(model, images, labels, params, loss_fn, steps, batch_size, lr):
    optimizer = torch.optim.Adam(params, lr=lr)
    n = images.shape[0]
    for step in range(steps):
        idx = torch.arange(step * batch_size, (step + 1) * batch_size) % n
        loss = loss_fn(model(images[idx]), labels[idx], step + 1)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()


def train_toy(model: ToyMultiExitNet, *, seed: int, resolution: int,
              steps: int = 400, batch_size: int = 8, lr: float = 3e-3,
              stage2: str = "ce", alpha: float = 0.5) -> ToyMultiExitNet:
    if stage2 not in STAGE2_MODES:
        raise ValueError(f"unknown stage-2 mode {stage2!r}; choose from {STAGE2_MODES}")
    torch.manual_seed(seed)
    pool = min(steps * batch_size, 256)
    images, labels = make_split(seed + 1, pool, resolution)
    model.train()
    if stage2 == "joint":
        _run(model, images, labels, model.parameters(),
             lambda lo, la, j: plain_ce_loss(lo, la), steps, batch_size, lr)
        model.eval()
        return model
    # stage 1: exit-aware end-to-end pre-training
    _run(model, images, labels, model.parameters(),
         lambda lo, la, j: exit_dropout_loss(lo, la, j), steps, batch_size, lr)
    # stage 2: backbone and final head frozen, early heads fitted alone
    final = str(model.exit_points[-1])
    for p in model.parameters():
        p.requires_grad_(False)
    head_params = []
    for name, head in model.heads.items():
        if name != final:
            for p in head.parameters():
                p.requires_grad_(True)
                head_params.append(p)
    if head_params:
        if stage2 == "pfd":
            loss_fn = lambda lo, la, j: pfd_batch_loss(lo, la, alpha)
        else:
            loss_fn = lambda lo, la, j: plain_ce_loss(
                {p: t for p, t in lo.items() if str(p) != final}, la)
        _run(model, images, labels, head_params, loss_fn, steps, batch_size, lr)
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    return model
