"""Writers for the consumer-side file formats.

Deliberately self-contained: the exporter talks to the tuning toolkit
only through files, so the `.mt` container (magic "MESS", version byte,
dtype byte with 0=float32 / 1=uint16, rank byte, little-endian uint32
dims, raw little-endian payload) and the JSON schemas are reimplemented
here from their documentation.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MESS"
VERSION = 1
DTYPE_F32 = 0
DTYPE_U16 = 1
IGNORE_VALUE = 65535


def _write(path: Path, arr: np.ndarray, dtype_code: int) -> None:
    header = struct.pack("<4sBBB", MAGIC, VERSION, dtype_code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(dims)
        f.write(np.ascontiguousarray(arr).tobytes())


def write_prediction(probs: np.ndarray, path: Path) -> None:
    """Write a (classes, rows, cols) softmax volume as float32."""
    arr = np.asarray(probs, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError("prediction must be rank 3 (classes, rows, cols)")
    _write(Path(path), arr, DTYPE_F32)


def write_labels(labels: np.ndarray, path: Path) -> None:
    """Write a (rows, cols) class-id map as uint16."""
    arr = np.asarray(labels, dtype="<u2")
    if arr.ndim != 2:
        raise ValueError("labels must be rank 2 (rows, cols)")
    _write(Path(path), arr, DTYPE_U16)


def write_manifest(path: Path, *, class_count: int, background_class: int,
                   images: list[dict]) -> None:
    doc = {
        "schema_version": 1,
        "class_count": class_count,
        "background_class": background_class,
        "images": images,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_costs(path: Path, block_workloads: list[float],
                exit_overheads: dict[int, float]) -> None:
    doc = {
        "schema_version": 1,
        "blocks": [{"workload": w} for w in block_workloads],
        "exit_overheads": {
            str(point): {"0": {"workload": w}}
            for point, w in sorted(exit_overheads.items())
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
