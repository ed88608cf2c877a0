"""Tiny synthetic segmentation task: same-looking shapes in noise.

Three classes: background, rectangle, disc.  Both shapes share one
foreground intensity, so pixels only reveal foreground-vs-background;
telling the rectangle from the disc takes shape-scale context (corners
vs curvature).  Receptive field therefore buys accuracy, which is
exactly the regime where deeper exits earn their keep.
"""

from __future__ import annotations

import numpy as np
import torch

N_CLASSES = 3


def make_split(seed: int, count: int, resolution: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns (images [N,1,H,W] float32, labels [N,H,W] int64)."""
    rng = np.random.default_rng(seed)
    h = w = resolution
    images = np.zeros((count, 1, h, w), dtype=np.float32)
    labels = np.zeros((count, h, w), dtype=np.int64)
    yy, xx = np.mgrid[0:h, 0:w]
    for i in range(count):
        lab = np.zeros((h, w), dtype=np.int64)
        # a rectangle and a disc, sizes and positions drawn per image
        rw, rh = rng.integers(w // 4, w // 2, 2)
        rx, ry = rng.integers(0, w - rw), rng.integers(0, h - rh)
        lab[ry:ry + rh, rx:rx + rw] = 1
        radius = int(rng.integers(h // 6, h // 3))
        cx, cy = rng.integers(radius, w - radius), rng.integers(radius, h - radius)
        lab[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2] = 2
        # both shapes share one intensity: class identity is pure geometry
        offsets = np.array([0.0, 0.9, 0.9], dtype=np.float32)
        img = offsets[lab] + rng.normal(0.0, 0.8, (h, w)).astype(np.float32)
        images[i, 0] = img
        labels[i] = lab
    return torch.from_numpy(images), torch.from_numpy(labels)
