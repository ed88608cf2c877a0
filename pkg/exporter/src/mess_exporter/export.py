"""Run a trained multi-exit model over a calibration set and write fixtures.

`export` produces one ``.mt`` softmax tensor per (image, exit), one label
map per image, a manifest and an analytically measured cost profile,
all in the tuning toolkit's documented formats, ready to feed its
cache-build / search / simulate pipeline without modification.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import torch
from torch.nn import functional as F

from . import mtio
from .data import N_CLASSES, make_split
from .model import (
    ToyMultiExitNet,
    block_workloads,
    head_workload,
    load_checkpoint,
    save_checkpoint,
)
from .train import train_toy


@dataclass
class ExportJob:
    """What to export: model source, subset size, exits, destination."""

    out_dir: Union[str, Path]
    model_source: str = "train-toy"  # or a checkpoint path
    dataset_size: int = 20
    exit_points: tuple[int, ...] = (2, 4, 6)
    resolution: int = 24
    seed: int = 0
    train_steps: int = 400
    stage2: str = "ce"
    alpha: float = 0.5
    save_checkpoint_to: Optional[Union[str, Path]] = None


@dataclass
class ExportResult:
    out_dir: Path
    manifest_path: Path
    costs_path: Path
    exit_points: tuple[int, ...]
    model: ToyMultiExitNet = field(repr=False)


def _resolve_model(job: ExportJob) -> ToyMultiExitNet:
    if job.model_source == "train-toy":
        model = ToyMultiExitNet(job.exit_points)
        return train_toy(model, seed=job.seed, resolution=job.resolution,
                         steps=job.train_steps, stage2=job.stage2,
                         alpha=job.alpha)
    return load_checkpoint(job.model_source, job.exit_points)


def export(job: ExportJob) -> ExportResult:
    """Write tensors, labels, manifest and costs for the job's calibration set."""
    model = _resolve_model(job)
    model.eval()
    out = Path(job.out_dir)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    for point in model.exit_points:
        (out / "preds" / f"e{point}").mkdir(parents=True, exist_ok=True)

    # a held-out split, disjoint from the training stream by seed offset
    images, labels = make_split(job.seed + 7919, job.dataset_size, job.resolution)
    entries = []
    with torch.no_grad():
        for i in range(job.dataset_size):
            image_id = f"img_{i:05d}"
            logits = model(images[i:i + 1])
            label_rel = f"labels/{image_id}.mt"
            mtio.write_labels(labels[i].numpy(), out / label_rel)
            predictions = {}
            for point in model.exit_points:
                probs = F.softmax(logits[point][0].double(), dim=0).float()
                rel = f"preds/e{point}/{image_id}.mt"
                mtio.write_prediction(probs.numpy(), out / rel)
                predictions[str(point)] = rel
            entries.append({
                "image_id": image_id,
                "label": label_rel,
                "predictions": predictions,
                "output_stride": {
                    str(point): model.feature_stride(point)
                    for point in model.exit_points
                },
            })

    manifest_path = out / "manifest.json"
    mtio.write_manifest(manifest_path, class_count=N_CLASSES,
                        background_class=0, images=entries)
    costs_path = out / "costs.json"
    mtio.write_costs(
        costs_path,
        block_workloads(job.resolution),
        {point: head_workload(model, point, job.resolution)
         for point in model.exit_points},
    )
    if job.save_checkpoint_to is not None:
        save_checkpoint(model, job.save_checkpoint_to)
    return ExportResult(out, manifest_path, costs_path, model.exit_points, model)
