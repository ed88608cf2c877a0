"""Toy multi-exit segmentation backbone with attachable exit heads.

Six conv blocks with two stride-2 stages; an exit head (1x1 conv to
class logits, bilinearly upsampled to input resolution) can attach to
the output of any block.  Workload is counted analytically from the
conv shapes, so the exported cost profile is deterministic.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .data import N_CLASSES

# (in_channels, out_channels, stride, dilation) per backbone block; the
# deep blocks dilate instead of downsampling further, so depth keeps
# adding receptive field the way dilated segmentation backbones do
BLOCK_SPECS = (
    (1, 8, 1, 1),
    (8, 16, 2, 1),
    (16, 16, 1, 1),
    (16, 32, 2, 1),
    (32, 32, 1, 2),
    (32, 32, 1, 4),
)
KERNEL = 3


class CheckpointMismatch(Exception):
    """Checkpoint disagrees with the requested job configuration."""


class UnexportableExitPoint(Exception):
    """Requested exit point is not a backbone block ordinal."""


class ToyMultiExitNet(nn.Module):
    def __init__(self, exit_points: tuple[int, ...], class_count: int = N_CLASSES):
        super().__init__()
        for point in exit_points:
            if not 1 <= point <= len(BLOCK_SPECS):
                raise UnexportableExitPoint(
                    f"exit point {point} outside blocks 1..{len(BLOCK_SPECS)}")
        self.exit_points = tuple(sorted(exit_points))
        self.class_count = class_count
        self.blocks = nn.ModuleList([
            nn.Sequential(
                nn.Conv2d(cin, cout, KERNEL, stride=stride,
                          padding=dilation, dilation=dilation),
                nn.ReLU(inplace=True),
            )
            for cin, cout, stride, dilation in BLOCK_SPECS
        ])
        self.heads = nn.ModuleDict({
            str(point): nn.Conv2d(BLOCK_SPECS[point - 1][1], class_count, 1)
            for point in self.exit_points
        })

    def forward(self, x: torch.Tensor) -> dict[int, torch.Tensor]:
        """Per-exit class logits at the input resolution."""
        size = x.shape[-2:]
        out: dict[int, torch.Tensor] = {}
        for ordinal, block in enumerate(self.blocks, start=1):
            x = block(x)
            if ordinal in self.exit_points:
                logits = self.heads[str(ordinal)](x)
                out[ordinal] = F.interpolate(logits, size=size, mode="bilinear",
                                             align_corners=False)
        return out

    def feature_stride(self, exit_point: int) -> int:
        stride = 1
        for _, _, s, _ in BLOCK_SPECS[:exit_point]:
            stride *= s
        return stride


def _conv_gflops(cin: int, cout: int, kernel: int, h_out: int, w_out: int) -> float:
    return 2.0 * cin * cout * kernel * kernel * h_out * w_out / 1e9


def block_workloads(resolution: int) -> list[float]:
    """Analytic per-block GFLOPs at the given square input resolution."""
    size = resolution
    costs = []
    for cin, cout, stride, _ in BLOCK_SPECS:
        size = (size + stride - 1) // stride if stride > 1 else size
        costs.append(_conv_gflops(cin, cout, KERNEL, size, size))
    return costs


def head_workload(model: ToyMultiExitNet, exit_point: int, resolution: int) -> float:
    stride = model.feature_stride(exit_point)
    size = resolution // stride
    cin = BLOCK_SPECS[exit_point - 1][1]
    return _conv_gflops(cin, model.class_count, 1, size, size)


def save_checkpoint(model: ToyMultiExitNet, path) -> None:
    torch.save({
        "exit_points": list(model.exit_points),
        "class_count": model.class_count,
        "state": model.state_dict(),
    }, path)


def load_checkpoint(path, exit_points: tuple[int, ...],
                    class_count: int = N_CLASSES) -> ToyMultiExitNet:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if tuple(blob["exit_points"]) != tuple(sorted(exit_points)) \
            or blob["class_count"] != class_count:
        raise CheckpointMismatch(
            f"checkpoint has exits {blob['exit_points']} / "
            f"{blob['class_count']} classes, job wants {sorted(exit_points)} / "
            f"{class_count}")
    model = ToyMultiExitNet(exit_points, class_count)
    model.load_state_dict(blob["state"])
    return model
