"""Deployment-style replay of an instance, plus synthetic fixture generation.

``simulate`` re-runs the exit policy per image on the raw prediction
tensors (never the calibration cache), so replaying an instance on its
own calibration manifest must reproduce the search-time evaluation
exactly; that equivalence is part of the test suite.

``gen_synthetic_fixtures`` builds desk-scale datasets where deeper exits
are more accurate and confidence genuinely signals correctness, so
confidence-based early exiting has something to find.  All randomness
flows from one 64-bit seed through counter-based Philox streams keyed by
(seed, purpose, image, exit, arch); files are byte-identical across runs
and machines.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .confidence import (
    enhance_confidence_map,
    exit_decision,
    image_confidence,
    pixel_confidence_map,
    semantic_edge_mask,
)
from .errors import BadLadder, DimMismatch, EmptyMatrix, ManifestMismatch
from .metrics import confusion_matrix, merge, miou, per_class_iou, pixel_accuracy
from .search import MessInstance, cost_of
from .tensorio import (
    IGNORE_VALUE,
    CostProfile,
    DatasetManifest,
    HeadCost,
    LabelMap,
    PredictionTensor,
    load_cost_profile,
    load_manifest,
    read_labels,
    read_tensor,
    save_cost_profile,
    save_manifest,
    write_labels,
    write_tensor,
)


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    exit_point: int
    c_img: Optional[float]
    iou: float


@dataclass(frozen=True)
class SimulationReport:
    setting: str
    image_count: int
    selected_exit_points: tuple[int, ...]
    exit_counts: tuple[int, ...]
    exit_rates: tuple[float, ...]
    expected_workload: float
    expected_latency: Optional[float]
    miou: float
    pixel_accuracy: float
    per_class_iou: tuple[float, ...]
    per_exit_miou: tuple[Optional[float], ...]
    per_image: tuple[ImageRecord, ...]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "setting": self.setting,
            "image_count": self.image_count,
            "selected_exit_points": list(self.selected_exit_points),
            "exit_counts": list(self.exit_counts),
            "exit_rates": list(self.exit_rates),
            "expected_workload": self.expected_workload,
            "expected_latency": self.expected_latency,
            "miou": self.miou,
            "pixel_accuracy": self.pixel_accuracy,
            "per_class_iou": list(self.per_class_iou),
            "per_exit_miou": list(self.per_exit_miou),
            "per_image": [
                {
                    "image_id": r.image_id,
                    "exit_point": r.exit_point,
                    "c_img": r.c_img,
                    "iou": r.iou,
                }
                for r in self.per_image
            ],
        }


def _image_iou(cm: np.ndarray) -> float:
    try:
        return miou(cm)
    except EmptyMatrix:
        return float("nan")


def simulate(instance: MessInstance, manifest: DatasetManifest,
             profile: CostProfile, threads: Optional[int] = None) -> SimulationReport:
    """Replay an instance over a manifest and measure what deployment would see."""
    config = instance.config
    selected = config.selected()
    m = manifest.class_count
    for _, point, sel in selected:
        if point not in manifest.exit_points:
            raise ManifestMismatch(f"manifest has no exit point {point}")
        try:
            manifest.images[0].prediction_path(point, sel.arch.arch_id)
        except KeyError:
            raise ManifestMismatch(
                f"manifest has no predictions for exit {point}, arch {sel.arch.arch_id}"
            ) from None

    n_sel = len(selected)
    input_dependent = config.setting == "input_dependent"

    def replay_image(img):
        """Returns (exit index, c_img at exit, cm at exit, per-exit cms or None)."""
        gt = read_labels(img.label_path)
        per_exit_cms = [] if config.setting == "anytime" else None
        for idx, (_, point, sel) in enumerate(selected):
            last = idx == n_sel - 1
            pred = read_tensor(img.prediction_path(point, sel.arch.arch_id))
            if pred.class_count != m or (pred.rows, pred.cols) != (gt.rows, gt.cols):
                raise DimMismatch(
                    f"{img.image_id}: prediction dims disagree with manifest/labels"
                )
            cm = confusion_matrix(pred.argmax_labels(), gt, m)
            if per_exit_cms is not None:
                per_exit_cms.append(cm)
            if not input_dependent:
                if last:
                    return idx, None, cm, per_exit_cms
                continue
            c_img = None
            if sel.thresholds is not None:
                chosen = pixel_confidence_map(pred, instance.estimator)
                if sel.thresholds.edge_enhancement:
                    mask = semantic_edge_mask(
                        pred.argmax_labels(), img.output_stride[point])
                    chosen = enhance_confidence_map(
                        chosen, mask, img.output_stride[point])
                c_img = image_confidence(chosen, sel.thresholds.th_pix)
            if last or exit_decision(c_img, sel.thresholds.th_img, last):
                return idx, c_img, cm, per_exit_cms
        raise AssertionError("walk must terminate at the deepest exit")

    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(replay_image, manifest.images))
    else:
        outcomes = [replay_image(img) for img in manifest.images]

    n = len(manifest.images)
    exit_counts = [0] * n_sel
    zeros = np.zeros((m, m), dtype=np.int64)
    partition_cms = [zeros.copy() for _ in range(n_sel)]
    anytime_cms = [zeros.copy() for _ in range(n_sel)] if config.setting == "anytime" else None
    records = []
    for img, (idx, c_img, cm, per_exit) in zip(manifest.images, outcomes):
        exit_counts[idx] += 1
        partition_cms[idx] += cm
        if anytime_cms is not None:
            for k, exit_cm in enumerate(per_exit):
                anytime_cms[k] += exit_cm
        records.append(ImageRecord(
            image_id=img.image_id,
            exit_point=selected[idx][1],
            c_img=c_img,
            iou=_image_iou(cm),
        ))

    if input_dependent:
        reached = n
        rates = []
        for count in exit_counts:
            rates.append(reached / n)
            reached -= count
        total_cm = merge(*partition_cms)
        headline_cm = total_cm
        per_exit_miou = tuple(
            _image_iou(cm) if count else None
            for cm, count in zip(partition_cms, exit_counts)
        )
        cost_rates = tuple(rates)
    else:
        rates = [1.0] * n_sel if config.setting == "anytime" else [1.0]
        # the headline accuracy matches the search-time definition: the
        # weakest checkpoint for anytime, the sole exit otherwise
        source = anytime_cms if anytime_cms is not None else partition_cms
        headline_cm = source[0] if config.setting == "anytime" else partition_cms[-1]
        total_cm = headline_cm
        per_exit_miou = tuple(_image_iou(cm) for cm in source) \
            if anytime_cms is not None else (None,) * (n_sel - 1) + (_image_iou(total_cm),)
        cost_rates = None

    workload = cost_of(config, profile, cost_rates, "workload")
    try:
        latency = cost_of(config, profile, cost_rates, "latency")
    except ValueError:
        latency = None

    return SimulationReport(
        setting=config.setting,
        image_count=n,
        selected_exit_points=tuple(point for _, point, _ in selected),
        exit_counts=tuple(exit_counts),
        exit_rates=tuple(rates),
        expected_workload=workload,
        expected_latency=latency,
        miou=miou(headline_cm),
        pixel_accuracy=pixel_accuracy(total_cm, manifest.background_class),
        per_class_iou=tuple(per_class_iou(total_cm)),
        per_exit_miou=per_exit_miou,
        per_image=tuple(records),
    )


# ---------------------------------------------------------------------------
# Synthetic fixtures
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1

# Per-image difficulty multiplies every exit's error rate, so easy images
# are easy at every depth: a three-piece mixture with unit mean keeps the
# measured per-exit accuracy on the requested ladder while providing a
# mass of near-trivial images that make early exiting worthwhile.
_EASY = (0.35, 0.0, 0.05)
_MEDIUM = (0.25, 0.05, 0.15)
_HARD_MASS = 1.0 - _EASY[0] - _MEDIUM[0]
_HARD_MEAN = (1.0 - _EASY[0] * 0.025 - _MEDIUM[0] * 0.10) / _HARD_MASS
_HARD = (_HARD_MASS, _HARD_MEAN - 0.1, _HARD_MEAN + 0.1)


def _difficulty_quantile(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    e_mass, e_lo, e_hi = _EASY
    m_mass, m_lo, m_hi = _MEDIUM
    h_mass, h_lo, h_hi = _HARD
    easy = u < e_mass
    medium = (~easy) & (u < e_mass + m_mass)
    hard = ~easy & ~medium
    out[easy] = e_lo + (u[easy] / e_mass) * (e_hi - e_lo)
    out[medium] = m_lo + ((u[medium] - e_mass) / m_mass) * (m_hi - m_lo)
    out[hard] = h_lo + ((u[hard] - e_mass - m_mass) / h_mass) * (h_hi - h_lo)
    return out


def _stream(seed: int, tag: int, image: int = 0, exit_point: int = 0,
            arch: int = 0) -> np.random.Generator:
    word = (tag << 48) | (exit_point << 40) | (arch << 32) | image
    key = np.array([seed & _MASK64, word & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class FixtureSet:
    out_dir: Path
    manifest_path: Path
    costs_path: Path
    exit_points: tuple[int, ...]
    difficulties: tuple[float, ...]


def gen_synthetic_fixtures(
    out_dir: Union[str, Path],
    *,
    seed: int,
    num_images: int,
    dims: tuple[int, int] = (32, 32),
    class_count: int = 5,
    num_exits: int = 3,
    accuracy_ladder: Sequence[float] = (0.6, 0.8, 0.95),
    confidence_correlation: float = 0.9,
    archs_per_point: int = 1,
    ignore_fraction: float = 0.02,
    total_workload: float = 60.0,
    id_prefix: str = "img",
) -> FixtureSet:
    """Write a deterministic manifest + tensors + cost profile under `out_dir`.

    Exit n's argmax matches ground truth on ~``accuracy_ladder[n]`` of the
    pixels.  Per-image difficulty is stratified (every call draws the same
    difficulty multiset, shuffled by seed), so two fixture sets of equal
    size are distribution-matched.  ``confidence_correlation`` in [0, 1]
    separates the confidence of correct and incorrect pixels; at 0 the
    confidence carries no signal.  With several archs per point, higher
    arch ids are more accurate and their heads cost more.
    """
    ladder = tuple(float(a) for a in accuracy_ladder)
    if len(ladder) != num_exits:
        raise BadLadder(f"ladder has {len(ladder)} rungs for {num_exits} exits")
    if any(not 0.0 < a <= 1.0 for a in ladder):
        raise BadLadder("ladder accuracies must lie in (0, 1]")
    if any(b < a for a, b in zip(ladder, ladder[1:])):
        raise BadLadder("ladder must be non-decreasing in depth")
    if class_count < 2:
        raise ValueError("fixtures need at least 2 classes")
    if not 0.0 <= confidence_correlation <= 1.0:
        raise ValueError("confidence_correlation must be in [0, 1]")
    if archs_per_point < 1 or num_images < 1 or num_exits < 1:
        raise ValueError("counts must be positive")
    if seed < 0:
        raise ValueError("seed must be a non-negative 64-bit integer")

    rows, cols = dims
    m = class_count
    out_dir = Path(out_dir)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    exit_points = tuple(2 * (n + 1) for n in range(num_exits))

    # stratified per-image difficulty, shuffled deterministically
    u = (np.arange(num_images, dtype=np.float64) + 0.5) / num_images
    betas = _difficulty_quantile(u)
    betas = betas[_stream(seed, 6).permutation(num_images)]

    hi = 0.55 + 0.42 * confidence_correlation
    lo = 0.55 - 0.35 * confidence_correlation
    conf_floor = 1.0 / m + 0.01
    cell = max(1, min(rows, cols) // 8)
    arch_ids = tuple(range(archs_per_point))

    entries = []
    for i in range(num_images):
        image_id = f"{id_prefix}_{i:05d}"
        lowres = _stream(seed, 1, i).integers(
            0, m, size=(math.ceil(rows / cell), math.ceil(cols / cell)))
        gt_clean = np.kron(lowres, np.ones((cell, cell), dtype=np.int64))[:rows, :cols]
        gt = gt_clean.copy()
        if ignore_fraction > 0:
            drop = _stream(seed, 2, i).random((rows, cols)) < ignore_fraction
            gt[drop] = IGNORE_VALUE
        label_rel = f"labels/{image_id}.mt"
        write_labels(LabelMap(gt.astype(np.uint16)), out_dir / label_rel)

        correctness_field = _stream(seed, 3, i).random((rows, cols))
        v = _stream(seed, 4, i).random((rows, cols))
        wrong = (gt_clean + 1 + np.floor(v * (m - 1)).astype(np.int64)) % m

        predictions: dict[str, object] = {}
        for n, point in enumerate(exit_points):
            by_arch = {}
            for arch in arch_ids:
                err_mult = 1.0 + 0.2 * (archs_per_point - 1 - arch)
                acc = min(1.0, max(0.0, 1.0 - (1.0 - ladder[n]) * err_mult * betas[i]))
                correct = correctness_field < acc
                labels = np.where(correct, gt_clean, wrong)
                z = _stream(seed, 5, i, point, arch).standard_normal((rows, cols))
                conf = np.where(correct, hi + 0.05 * z, lo + 0.07 * z)
                conf = np.clip(conf, conf_floor, 0.995)
                data = np.broadcast_to((1.0 - conf) / (m - 1), (m, rows, cols)).copy()
                rr, cc = np.indices((rows, cols))
                data[labels, rr, cc] = conf
                (out_dir / "preds" / f"e{point}").mkdir(parents=True, exist_ok=True)
                if archs_per_point == 1:
                    rel = f"preds/e{point}/{image_id}.mt"
                else:
                    rel = f"preds/e{point}/a{arch}_{image_id}.mt"
                write_tensor(PredictionTensor(data.astype(np.float32)), out_dir / rel)
                by_arch[str(arch)] = rel
            if archs_per_point == 1:
                predictions[str(point)] = by_arch["0"]
            else:
                predictions[str(point)] = by_arch
        entries.append({
            "image_id": image_id,
            "label": label_rel,
            "predictions": predictions,
            "output_stride": {str(point): 1 for point in exit_points},
        })

    manifest_path = out_dir / "manifest.json"
    save_manifest({
        "class_count": m,
        "background_class": 0,
        "images": entries,
    }, manifest_path)

    costs_path = out_dir / "costs.json"
    save_cost_profile(_fixture_cost_profile(
        num_exits, exit_points, arch_ids, total_workload), costs_path)
    return FixtureSet(out_dir, manifest_path, costs_path, exit_points, tuple(betas))


def _fixture_cost_profile(num_exits: int, exit_points: tuple[int, ...],
                          arch_ids: tuple[int, ...],
                          total_workload: float) -> CostProfile:
    """Backbone with a back-loaded workload ramp and a heavyweight final head."""
    ramp = np.array([2.2 ** n for n in range(num_exits)], dtype=np.float64)
    segments = ramp / ramp.sum() * total_workload
    blocks = []
    for s in segments:
        blocks.extend([s / 2.0, s / 2.0])
    scale = total_workload / 60.0
    overheads = {}
    for n, point in enumerate(exit_points):
        base = (6.0 if n == num_exits - 1 else 0.8) * scale
        overheads[point] = {
            arch: HeadCost(workload=base * (1.0 + 0.15 * arch),
                           latency=0.5 * base * (1.0 + 0.15 * arch))
            for arch in arch_ids
        }
    return CostProfile(
        block_workloads=tuple(blocks),
        block_latencies=tuple(0.45 * b for b in blocks),
        exit_overheads=overheads,
    )


def load_fixture_set(out_dir: Union[str, Path]) -> tuple[DatasetManifest, CostProfile]:
    """Convenience loader for a directory written by ``gen_synthetic_fixtures``."""
    out_dir = Path(out_dir)
    return load_manifest(out_dir / "manifest.json"), load_cost_profile(out_dir / "costs.json")
