"""Binary tensor files, dataset manifests and cost profiles.

Tensor files (``.mt``) are a minimal language-neutral container:

    magic    4 bytes   b"MESS"
    version  1 byte    currently 1
    dtype    1 byte    0 = float32, 1 = uint16
    rank     1 byte
    dims     rank * uint32, little-endian
    payload  raw values, little-endian, row-major

Prediction tensors are rank-3 float32 volumes laid out class-major
``(class, row, col)``; label maps are rank-2 uint16 grids with 65535 as
the ignore sentinel.  Manifests (``manifest.json``) and cost profiles
(``costs.json``) are JSON documents; the schemas are documented in the
README and mirrored by :func:`save_manifest` / :func:`save_cost_profile`.

Everything loaded here is immutable and safe to share across workers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import (
    BadMagic,
    DimMismatch,
    InconsistentExitSet,
    InvalidDistribution,
    MissingFile,
    MissingReferencedFile,
    NonFiniteValue,
    NonPositiveCost,
    ParseError,
)

MAGIC = b"MESS"
FORMAT_VERSION = 1
DTYPE_F32 = 0
DTYPE_U16 = 1
IGNORE_VALUE = 65535

# f32 export rounding tolerance on the per-pixel probability sums.
SOFTMAX_SUM_TOL = 1e-4
VALUE_TOL = 1e-6

_DTYPE_CODES = {DTYPE_F32: np.dtype("<f4"), DTYPE_U16: np.dtype("<u2")}


@dataclass(frozen=True, eq=False)
class PredictionTensor:
    """Per-pixel class distribution of one exit, shape (classes, rows, cols)."""

    data: np.ndarray
    exit_id: int = 0

    def __eq__(self, other):
        if not isinstance(other, PredictionTensor):
            return NotImplemented
        return (self.exit_id == other.exit_id
                and self.data.shape == other.data.shape
                and np.array_equal(self.data, other.data))

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise DimMismatch(f"prediction tensor must be rank 3, got rank {arr.ndim}")
        if not np.isfinite(arr).all():
            raise NonFiniteValue("prediction tensor contains NaN or infinite values")
        if float(arr.min(initial=0.0)) < -VALUE_TOL or float(arr.max(initial=0.0)) > 1.0 + VALUE_TOL:
            raise InvalidDistribution("class probabilities outside [0, 1]")
        sums = arr.sum(axis=0, dtype=np.float64)
        err = float(np.abs(sums - 1.0).max(initial=0.0))
        if err > SOFTMAX_SUM_TOL:
            raise InvalidDistribution(f"per-pixel probability sums deviate from 1 by {err:.3g}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def class_count(self) -> int:
        return self.data.shape[0]

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]

    def argmax_labels(self) -> "LabelMap":
        """Predicted class id per pixel (first max wins on exact ties)."""
        return LabelMap(np.argmax(self.data, axis=0).astype(np.uint16))


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Dense class-id map, shape (rows, cols); `ignore_value` marks unlabeled pixels."""

    data: np.ndarray
    ignore_value: int = IGNORE_VALUE

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return (self.ignore_value == other.ignore_value
                and self.data.shape == other.data.shape
                and np.array_equal(self.data, other.data))

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise DimMismatch(f"label map must be rank 2, got rank {arr.ndim}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise DimMismatch("label map must hold integer class ids")
        if arr.size and (int(arr.min()) < 0 or int(arr.max()) > 65535):
            raise InvalidDistribution("class ids must fit in uint16")
        arr = arr.astype(np.uint16, copy=False)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# .mt files
# ---------------------------------------------------------------------------

def _write_mt(arr: np.ndarray, dtype_code: int, path: Union[str, Path]) -> None:
    arr = np.ascontiguousarray(arr.astype(_DTYPE_CODES[dtype_code], copy=False))
    header = struct.pack("<4sBBB", MAGIC, FORMAT_VERSION, dtype_code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(dims)
        f.write(arr.tobytes())


def _read_mt(path: Union[str, Path]) -> tuple[int, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such tensor file: {path}")
    blob = path.read_bytes()
    if len(blob) < 7 or blob[:4] != MAGIC:
        raise BadMagic(f"{path}: missing MESS magic header")
    version, dtype_code, rank = struct.unpack_from("<BBB", blob, 4)
    if version != FORMAT_VERSION:
        raise BadMagic(f"{path}: unsupported format version {version}")
    if dtype_code not in _DTYPE_CODES:
        raise BadMagic(f"{path}: unknown dtype code {dtype_code}")
    header_end = 7 + 4 * rank
    if len(blob) < header_end:
        raise DimMismatch(f"{path}: truncated dimension header")
    dims = struct.unpack_from(f"<{rank}I", blob, 7)
    dtype = _DTYPE_CODES[dtype_code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = blob[header_end:]
    if len(payload) != expected:
        raise DimMismatch(
            f"{path}: payload is {len(payload)} bytes, dims {dims} require {expected}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return dtype_code, arr


def write_tensor(tensor: PredictionTensor, path: Union[str, Path]) -> None:
    """Write a prediction tensor to a ``.mt`` file."""
    _write_mt(tensor.data, DTYPE_F32, path)


def read_tensor(path: Union[str, Path], exit_id: int = 0) -> PredictionTensor:
    """Read and validate a prediction tensor from a ``.mt`` file."""
    dtype_code, arr = _read_mt(path)
    if dtype_code != DTYPE_F32 or arr.ndim != 3:
        raise DimMismatch(f"{path}: expected a rank-3 float32 prediction tensor")
    if not np.isfinite(arr).all():
        raise NonFiniteValue(f"{path}: payload contains NaN or infinite values")
    return PredictionTensor(arr, exit_id=exit_id)


def write_labels(labels: LabelMap, path: Union[str, Path]) -> None:
    """Write a label map to a ``.mt`` file."""
    _write_mt(labels.data, DTYPE_U16, path)


def read_labels(path: Union[str, Path], ignore_value: int = IGNORE_VALUE) -> LabelMap:
    """Read a label map from a ``.mt`` file."""
    dtype_code, arr = _read_mt(path)
    if dtype_code != DTYPE_U16 or arr.ndim != 2:
        raise DimMismatch(f"{path}: expected a rank-2 uint16 label map")
    return LabelMap(arr, ignore_value=ignore_value)


def write_map(values: np.ndarray, path: Union[str, Path]) -> None:
    """Write a rank-2 float map (e.g. a confidence map) as a ``.mt`` file."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise DimMismatch("expected a rank-2 map")
    _write_mt(arr, DTYPE_F32, path)


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------

# predictions: exit point -> arch id -> path.  A plain per-exit path in the
# JSON is normalised to {SHARED_ARCH: path} and serves every arch id.
SHARED_ARCH = -1


@dataclass(frozen=True)
class ManifestImage:
    image_id: str
    label_path: Path
    predictions: Mapping[int, Mapping[int, Path]]
    output_stride: Mapping[int, int]

    def prediction_path(self, exit_point: int, arch_id: int) -> Path:
        by_arch = self.predictions[exit_point]
        if arch_id in by_arch:
            return by_arch[arch_id]
        if SHARED_ARCH in by_arch:
            return by_arch[SHARED_ARCH]
        raise KeyError((exit_point, arch_id))


@dataclass(frozen=True)
class DatasetManifest:
    class_count: int
    background_class: int
    images: tuple[ManifestImage, ...]
    root: Path = field(default_factory=Path)

    @property
    def exit_points(self) -> tuple[int, ...]:
        if not self.images:
            return ()
        return tuple(sorted(self.images[0].predictions))

    def arch_ids(self, exit_point: int) -> tuple[int, ...]:
        """Arch ids with dedicated predictions at this exit point.

        Returns ``(SHARED_ARCH,)`` when the manifest carries one shared
        tensor per exit; such a tensor serves any requested arch id.
        """
        if not self.images:
            return ()
        return tuple(sorted(self.images[0].predictions[exit_point]))

    def output_stride(self, exit_point: int) -> int:
        return self.images[0].output_stride[exit_point]


def _as_exit_key(key: str) -> int:
    try:
        point = int(key)
    except ValueError:
        raise ParseError(f"exit point keys must be integers, got {key!r}") from None
    if point < 1:
        raise ParseError(f"exit point ordinals start at 1, got {point}")
    return point


def _parse_predictions(entry, root: Path) -> dict[int, dict[int, Path]]:
    preds: dict[int, dict[int, Path]] = {}
    for key, value in entry.items():
        point = _as_exit_key(key)
        if isinstance(value, str):
            preds[point] = {SHARED_ARCH: root / value}
        elif isinstance(value, dict):
            by_arch: dict[int, Path] = {}
            for arch_key, p in value.items():
                try:
                    arch = int(arch_key)
                except ValueError:
                    raise ParseError(f"arch ids must be integers, got {arch_key!r}") from None
                if not isinstance(p, str):
                    raise ParseError("prediction paths must be strings")
                by_arch[arch] = root / p
            if not by_arch:
                raise ParseError(f"exit point {point} lists no predictions")
            preds[point] = by_arch
        else:
            raise ParseError("predictions must map exit points to paths or arch->path tables")
    if not preds:
        raise ParseError("image lists no prediction paths")
    return preds


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Load and validate a dataset manifest.

    All referenced files must exist; otherwise every missing path is
    collected into a single :class:`MissingReferencedFile` error.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such manifest: {path}")
    root = path.parent
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON ({e})") from e
    try:
        class_count = int(doc["class_count"])
        background = int(doc.get("background_class", 0))
        raw_images = doc["images"]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: missing or malformed field ({e})") from e
    if class_count < 1:
        raise ParseError("class_count must be >= 1")
    if not isinstance(raw_images, list) or not raw_images:
        raise ParseError("manifest must list at least one image")

    images = []
    for entry in raw_images:
        try:
            image_id = str(entry["image_id"])
            label_path = root / entry["label"]
            preds = _parse_predictions(entry["predictions"], root)
            strides = {
                _as_exit_key(k): int(v) for k, v in entry.get("output_stride", {}).items()
            }
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ParseError(f"{path}: malformed image entry ({e})") from e
        for point in preds:
            strides.setdefault(point, 1)
        if any(s < 1 for s in strides.values()):
            raise ParseError("output strides must be positive integers")
        images.append(ManifestImage(image_id, label_path, preds, strides))

    reference = {point: tuple(sorted(by)) for point, by in images[0].predictions.items()}
    for img in images[1:]:
        got = {point: tuple(sorted(by)) for point, by in img.predictions.items()}
        if got != reference:
            raise InconsistentExitSet(
                f"image {img.image_id!r} lists exits {sorted(got)} "
                f"but {images[0].image_id!r} lists {sorted(reference)}"
            )

    missing = []
    for img in images:
        if not img.label_path.is_file():
            missing.append(img.label_path)
        for by_arch in img.predictions.values():
            for p in by_arch.values():
                if not p.is_file():
                    missing.append(p)
    if missing:
        raise MissingReferencedFile(missing)

    return DatasetManifest(class_count, background, tuple(images), root)


def save_manifest(doc: dict, path: Union[str, Path]) -> None:
    """Write a manifest document with canonical formatting."""
    doc = {"schema_version": 1, **doc}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Cost profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeadCost:
    workload: float
    latency: Optional[float] = None


@dataclass(frozen=True)
class CostProfile:
    """Per-block backbone costs plus per-(exit point, arch) head overheads.

    Blocks use 1-based ordinals.  ``segment_cost(i, j)`` is the cost of
    blocks ``i+1 .. j``, so the backbone cost from the input through block
    ``K`` is ``segment_cost(0, K)``.
    """

    block_workloads: tuple[float, ...]
    block_latencies: Optional[tuple[float, ...]] = None
    exit_overheads: Mapping[int, Mapping[int, HeadCost]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.block_workloads:
            raise NonPositiveCost("cost profile lists no blocks")
        if any(w <= 0 for w in self.block_workloads):
            raise NonPositiveCost("block workloads must be strictly positive")
        if self.block_latencies is not None:
            if len(self.block_latencies) != len(self.block_workloads):
                raise ParseError("latency list must match the block list")
            if any(l <= 0 for l in self.block_latencies):
                raise NonPositiveCost("block latencies must be strictly positive")
        for point, by_arch in self.exit_overheads.items():
            if not 1 <= point <= len(self.block_workloads):
                raise ParseError(f"exit point {point} outside the block range")
            for head in by_arch.values():
                if head.workload <= 0 or (head.latency is not None and head.latency <= 0):
                    raise NonPositiveCost("exit overheads must be strictly positive")
        object.__setattr__(self, "_prefix_workload", np.concatenate(
            ([0.0], np.cumsum(np.asarray(self.block_workloads, dtype=np.float64)))))
        if self.block_latencies is not None:
            object.__setattr__(self, "_prefix_latency", np.concatenate(
                ([0.0], np.cumsum(np.asarray(self.block_latencies, dtype=np.float64)))))
        else:
            object.__setattr__(self, "_prefix_latency", None)

    @property
    def n_blocks(self) -> int:
        return len(self.block_workloads)

    @property
    def has_latency(self) -> bool:
        return self.block_latencies is not None

    def segment_cost(self, i: int, j: int, kind: str = "workload") -> float:
        """Cost of blocks ``i+1 .. j`` (0 <= i <= j <= n_blocks)."""
        if not 0 <= i <= j <= self.n_blocks:
            raise ValueError(f"invalid block segment ({i}, {j})")
        prefix = self._prefix(kind)
        return float(prefix[j] - prefix[i])

    def head_cost(self, exit_point: int, arch_id: int, kind: str = "workload") -> float:
        try:
            head = self.exit_overheads[exit_point][arch_id]
        except KeyError:
            raise KeyError(
                f"no head overhead for exit point {exit_point}, arch {arch_id}"
            ) from None
        if kind == "workload":
            return head.workload
        if kind == "latency":
            if head.latency is None:
                raise ValueError("cost profile has no latency for this head")
            return head.latency
        raise ValueError(f"unknown cost kind {kind!r}")

    def _prefix(self, kind: str) -> np.ndarray:
        if kind == "workload":
            return self._prefix_workload
        if kind == "latency":
            if self._prefix_latency is None:
                raise ValueError("cost profile has no latency data")
            return self._prefix_latency
        raise ValueError(f"unknown cost kind {kind!r}")


def load_cost_profile(path: Union[str, Path]) -> CostProfile:
    """Load and validate a ``costs.json`` document."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such cost profile: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON ({e})") from e
    try:
        blocks = doc["blocks"]
        workloads = tuple(float(b["workload"]) for b in blocks)
        with_latency = [("latency" in b) for b in blocks]
        if any(with_latency) and not all(with_latency):
            raise ParseError("either every block or no block carries a latency")
        latencies = tuple(float(b["latency"]) for b in blocks) if all(with_latency) and blocks else None
        overheads: dict[int, dict[int, HeadCost]] = {}
        for point_key, by_arch in doc.get("exit_overheads", {}).items():
            point = _as_exit_key(point_key)
            overheads[point] = {}
            for arch_key, head in by_arch.items():
                overheads[point][int(arch_key)] = HeadCost(
                    workload=float(head["workload"]),
                    latency=float(head["latency"]) if "latency" in head else None,
                )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: missing or malformed field ({e})") from e
    return CostProfile(workloads, latencies, overheads)


def save_cost_profile(profile: CostProfile, path: Union[str, Path]) -> None:
    """Write a cost profile as a ``costs.json`` document."""
    blocks = []
    for i, w in enumerate(profile.block_workloads):
        entry: dict = {"workload": w}
        if profile.block_latencies is not None:
            entry["latency"] = profile.block_latencies[i]
        blocks.append(entry)
    overheads: dict = {}
    for point, by_arch in sorted(profile.exit_overheads.items()):
        overheads[str(point)] = {}
        for arch_id, head in sorted(by_arch.items()):
            entry = {"workload": head.workload}
            if head.latency is not None:
                entry["latency"] = head.latency
            overheads[str(point)][str(arch_id)] = entry
    doc = {"schema_version": 1, "blocks": blocks, "exit_overheads": overheads}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
