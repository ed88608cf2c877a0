"""Configuration space, cost model, calibration cache and exhaustive search.

A deployable instance selects, per candidate exit point, either nothing
or one exit-head architecture (plus thresholds for input-dependent
inference).  The search enumerates that space exhaustively, scoring
candidates against a calibration cache of memoised per-image confusion
matrices and confidence tables, so no prediction tensor is touched twice.

Tie-breaking is deterministic and documented: among equally good
candidates the winner has lower cost, then fewer selected exits, then
shallower exit points, then the lexicographically smallest
(arch ids, thresholds) tuple.
"""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from .confidence import (
    ExitThresholds,
    enhance_confidence_map,
    image_confidence,
    pixel_confidence_map,
    semantic_edge_mask,
)
from .errors import (
    ConfigSettingMismatch,
    DimMismatch,
    EmptySpace,
    MissingExitRates,
    UnknownArch,
)
from .metrics import confusion_matrix, miou
from .profiling import ExitPlacement
from .tensorio import (
    CostProfile,
    DatasetManifest,
    read_labels,
    read_tensor,
)

SETTINGS = ("final_only", "budgeted", "anytime", "input_dependent")

CRM_OPTIONS = (0, 1, 2, 3)        # channel reduction /1, /2, /4, /8
NUM_BLOCK_OPTIONS = (0, 1, 2, 3)  # extra trainable blocks after the CRM
HEAD_OPTIONS = ("fcn", "dlb")

DEFAULT_TH_PIX_GRID = tuple(round(0.50 + 0.05 * i, 2) for i in range(10)) + (0.99,)
DEFAULT_TH_IMG_GRID = tuple(round(0.05 * i, 2) for i in range(21))


@dataclass(frozen=True)
class ExitArch:
    """One exit head's option tuple; 64 distinct combinations."""

    crm: int = 0
    num_blocks: int = 0
    rdi: bool = False
    head: str = "fcn"

    def __post_init__(self):
        if self.crm not in CRM_OPTIONS:
            raise ValueError(f"crm must be one of {CRM_OPTIONS}")
        if self.num_blocks not in NUM_BLOCK_OPTIONS:
            raise ValueError(f"num_blocks must be one of {NUM_BLOCK_OPTIONS}")
        if self.head not in HEAD_OPTIONS:
            raise ValueError(f"head must be one of {HEAD_OPTIONS}")

    @property
    def arch_id(self) -> int:
        return ((self.crm * 4 + self.num_blocks) * 2 + int(self.rdi)) * 2 \
            + HEAD_OPTIONS.index(self.head)

    @classmethod
    def from_id(cls, arch_id: int) -> "ExitArch":
        if not 0 <= arch_id < 64:
            raise UnknownArch(f"arch ids run from 0 to 63, got {arch_id}")
        head = HEAD_OPTIONS[arch_id % 2]
        rdi = bool((arch_id // 2) % 2)
        num_blocks = (arch_id // 4) % 4
        crm = arch_id // 16
        return cls(crm, num_blocks, rdi, head)

    @classmethod
    def all_archs(cls) -> tuple["ExitArch", ...]:
        return tuple(cls.from_id(i) for i in range(64))


@dataclass(frozen=True)
class SelectedExit:
    arch: ExitArch
    thresholds: Optional[ExitThresholds] = None


@dataclass(frozen=True)
class MessConfig:
    """A full instance assignment: arch-or-None per candidate exit point."""

    setting: str
    placement: ExitPlacement
    exits: tuple[Optional[SelectedExit], ...]

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ConfigSettingMismatch(f"unknown setting {self.setting!r}")
        if len(self.exits) != self.placement.count:
            raise ConfigSettingMismatch(
                f"{len(self.exits)} exit slots for {self.placement.count} exit points"
            )
        selected = [i for i, e in enumerate(self.exits) if e is not None]
        if not selected:
            raise ConfigSettingMismatch("a config must select at least one exit")
        if self.setting in ("budgeted", "final_only") and len(selected) != 1:
            raise ConfigSettingMismatch(f"{self.setting} selects exactly one exit")
        if self.setting == "final_only" and selected[0] != self.placement.count - 1:
            raise ConfigSettingMismatch("final_only must select the last exit point")
        if self.setting == "input_dependent":
            for i in selected[:-1]:
                if self.exits[i].thresholds is None:
                    raise ConfigSettingMismatch(
                        "input-dependent exits above the deepest need thresholds"
                    )

    def selected(self) -> tuple[tuple[int, int, SelectedExit], ...]:
        """(slot index, exit point K, selection) for each selected exit, by depth."""
        return tuple(
            (i, self.placement.exit_points[i], e)
            for i, e in enumerate(self.exits)
            if e is not None
        )

    @property
    def n_selected(self) -> int:
        return sum(e is not None for e in self.exits)


@dataclass(frozen=True)
class SearchObjective:
    """min_cost subject to accuracy >= threshold, or max_acc subject to cost <= threshold."""

    mode: str
    threshold: float
    cost_kind: str = "workload"

    def __post_init__(self):
        if self.mode not in ("min_cost", "max_acc"):
            raise ValueError("mode must be 'min_cost' or 'max_acc'")
        if self.cost_kind not in ("workload", "latency"):
            raise ValueError("cost_kind must be 'workload' or 'latency'")
        if self.mode == "min_cost" and not 0.0 <= self.threshold <= 1.0:
            raise ValueError("accuracy threshold must be in [0, 1]")
        if self.mode == "max_acc" and not (np.isfinite(self.threshold) and self.threshold > 0):
            raise ValueError("cost threshold must be finite and positive")


@dataclass
class SearchLimits:
    """Search-space bounds: exit-count cap, threshold grids, arch availability."""

    max_exits: int = 4
    th_img_grid: tuple[float, ...] = DEFAULT_TH_IMG_GRID
    th_pix_grid: Optional[tuple[float, ...]] = None
    enhancement_options: tuple[bool, ...] = (False,)
    arch_availability: Optional[Mapping[int, Sequence[int]]] = None

    def __post_init__(self):
        if self.max_exits < 1:
            raise ValueError("max_exits must be >= 1")


# ---------------------------------------------------------------------------
# Space enumeration
# ---------------------------------------------------------------------------

ConfigSkeleton = tuple  # tuple[Optional[ExitArch], ...], aligned with the placement


def enumerate_space(placement: ExitPlacement,
                    availability: Mapping[int, Sequence[ExitArch]]) -> Iterator[ConfigSkeleton]:
    """Yield every arch-or-None assignment over the exit points, minus all-None.

    `availability` maps exit points to the archs trained there; points
    missing from the map only offer the None option.  Order is
    deterministic: per point None first, then archs by ascending id,
    with the deepest point varying fastest.
    """
    option_lists = []
    for point in placement.exit_points:
        archs = sorted(availability.get(point, ()), key=lambda a: a.arch_id)
        option_lists.append([None] + list(archs))
    total = 1
    for options in option_lists:
        total *= len(options)
    if total <= 1:
        raise EmptySpace("no arch available at any exit point")

    def generate():
        for combo in itertools.product(*option_lists):
            if all(a is None for a in combo):
                continue
            yield combo

    return generate()


# ---------------------------------------------------------------------------
# Cost model
# ---------------------------------------------------------------------------

def cost_of(config: MessConfig, profile: CostProfile,
            exit_rates: Optional[Sequence[float]] = None,
            cost_kind: str = "workload") -> float:
    """Inference cost of a config under its setting.

    final_only / budgeted: backbone through the selected exit point plus
    that head.  anytime: backbone through the deepest selected point plus
    every selected head.  input_dependent: propagation-rate-weighted sum
    of per-segment backbone cost plus head cost, where ``exit_rates[n]``
    is the fraction of samples reaching the n-th selected exit
    (``exit_rates[0] == 1``).
    """
    selected = config.selected()
    if config.setting == "input_dependent":
        if exit_rates is None:
            raise MissingExitRates("input-dependent cost needs exit rates")
        if len(exit_rates) != len(selected):
            raise ValueError(
                f"{len(exit_rates)} exit rates for {len(selected)} selected exits"
            )
        if exit_rates[0] != 1.0:
            raise ValueError("the first exit rate must be 1.0 (every sample arrives)")
    elif exit_rates is not None:
        raise ConfigSettingMismatch(f"{config.setting} inference takes no exit rates")

    if config.setting in ("final_only", "budgeted"):
        _, point, sel = selected[0]
        return profile.segment_cost(0, point, cost_kind) \
            + profile.head_cost(point, sel.arch.arch_id, cost_kind)

    if config.setting == "anytime":
        deepest = selected[-1][1]
        total = profile.segment_cost(0, deepest, cost_kind)
        for _, point, sel in selected:
            total += profile.head_cost(point, sel.arch.arch_id, cost_kind)
        return total

    total = 0.0
    prev_point = 0
    for (_, point, sel), rate in zip(selected, exit_rates):
        total += rate * (profile.segment_cost(prev_point, point, cost_kind)
                         + profile.head_cost(point, sel.arch.arch_id, cost_kind))
        prev_point = point
    return total


# ---------------------------------------------------------------------------
# Calibration cache
# ---------------------------------------------------------------------------

def confidence_maps(pred, estimator: str, output_stride: int):
    """Plain and edge-enhanced confidence maps for one prediction.

    Shared by the cache build and the deployment replay so both paths
    produce bit-identical confidence values.
    """
    cmap = pixel_confidence_map(pred, estimator)
    mask = semantic_edge_mask(pred.argmax_labels(), output_stride)
    enhanced = enhance_confidence_map(cmap, mask, output_stride)
    return cmap, enhanced


class CalibrationCache:
    """Memoised per-(image, exit point, arch) statistics on the calibration set.

    Stores each pair's confusion matrix against ground truth and its
    per-image confidence tabulated over the th_pix grid, with and
    without edge enhancement.  Evaluating any config then reduces to
    boolean masking and integer sums; no tensor is re-read.
    """

    def __init__(self, *, class_count: int, estimator: str,
                 th_pix_grid: Sequence[float], image_ids: Sequence[str],
                 exit_points: Sequence[int],
                 arch_ids: Mapping[int, Sequence[int]],
                 conf_mats: Mapping[tuple[int, int], np.ndarray],
                 conf_tables: Mapping[tuple[int, int], np.ndarray],
                 background_class: int = 0):
        self.class_count = int(class_count)
        self.estimator = estimator
        self.th_pix_grid = tuple(float(t) for t in th_pix_grid)
        self.image_ids = tuple(image_ids)
        self.exit_points = tuple(int(k) for k in exit_points)
        self.arch_ids = {int(k): tuple(int(a) for a in v) for k, v in arch_ids.items()}
        self.background_class = int(background_class)
        self.conf_mats = dict(conf_mats)
        self.conf_tables = dict(conf_tables)
        self._th_index = {t: i for i, t in enumerate(self.th_pix_grid)}
        self._dataset_cm: dict[tuple[int, int], np.ndarray] = {}
        self._dataset_miou: dict[tuple[int, int], float] = {}
        self._mask_memo: dict[tuple, np.ndarray] = {}

    @property
    def n_images(self) -> int:
        return len(self.image_ids)

    def _require(self, exit_point: int, arch_id: int) -> tuple[int, int]:
        key = (exit_point, arch_id)
        if key not in self.conf_mats:
            raise UnknownArch(f"no cached data for exit point {exit_point}, arch {arch_id}")
        return key

    def th_index(self, th_pix: float) -> int:
        try:
            return self._th_index[float(th_pix)]
        except KeyError:
            raise ValueError(
                f"th_pix {th_pix} not tabulated; grid is {self.th_pix_grid}"
            ) from None

    def confidences(self, exit_point: int, arch_id: int, th_pix: float,
                    enhanced: bool) -> np.ndarray:
        key = self._require(exit_point, arch_id)
        return self.conf_tables[key][:, self.th_index(th_pix), int(enhanced)]

    def exit_mask(self, exit_point: int, arch_id: int,
                  thresholds: ExitThresholds) -> np.ndarray:
        """Boolean per-image mask of samples confident enough to stop here."""
        memo_key = (exit_point, arch_id, thresholds.th_pix, thresholds.th_img,
                    thresholds.edge_enhancement)
        mask = self._mask_memo.get(memo_key)
        if mask is None:
            c = self.confidences(exit_point, arch_id, thresholds.th_pix,
                                 thresholds.edge_enhancement)
            mask = c >= thresholds.th_img
            mask.setflags(write=False)
            self._mask_memo[memo_key] = mask
        return mask

    def dataset_cm(self, exit_point: int, arch_id: int) -> np.ndarray:
        key = self._require(exit_point, arch_id)
        cm = self._dataset_cm.get(key)
        if cm is None:
            cm = self.conf_mats[key].sum(axis=0)
            self._dataset_cm[key] = cm
        return cm

    def dataset_miou(self, exit_point: int, arch_id: int) -> float:
        key = self._require(exit_point, arch_id)
        value = self._dataset_miou.get(key)
        if value is None:
            value = miou(self.dataset_cm(exit_point, arch_id))
            self._dataset_miou[key] = value
        return value

    # -- persistence --------------------------------------------------------

    def save(self, path: Union[str, Path]) -> None:
        meta = {
            "schema_version": 1,
            "class_count": self.class_count,
            "estimator": self.estimator,
            "th_pix_grid": list(self.th_pix_grid),
            "image_ids": list(self.image_ids),
            "exit_points": list(self.exit_points),
            "arch_ids": {str(k): list(v) for k, v in self.arch_ids.items()},
            "background_class": self.background_class,
        }
        arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
        for (point, arch), cm in self.conf_mats.items():
            arrays[f"cm_{point}_{arch}"] = cm
            arrays[f"ct_{point}_{arch}"] = self.conf_tables[(point, arch)]
        with open(path, "wb") as f:
            np.savez(f, **arrays)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CalibrationCache":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            conf_mats = {}
            conf_tables = {}
            for name in data.files:
                if name.startswith("cm_"):
                    _, point, arch = name.split("_")
                    conf_mats[(int(point), int(arch))] = data[name]
                elif name.startswith("ct_"):
                    _, point, arch = name.split("_")
                    conf_tables[(int(point), int(arch))] = data[name]
        return cls(
            class_count=meta["class_count"],
            estimator=meta["estimator"],
            th_pix_grid=meta["th_pix_grid"],
            image_ids=meta["image_ids"],
            exit_points=meta["exit_points"],
            arch_ids={int(k): v for k, v in meta["arch_ids"].items()},
            conf_mats=conf_mats,
            conf_tables=conf_tables,
            background_class=meta.get("background_class", 0),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, CalibrationCache):
            return NotImplemented
        if (self.class_count, self.estimator, self.th_pix_grid, self.image_ids,
                self.exit_points, self.arch_ids) != \
           (other.class_count, other.estimator, other.th_pix_grid, other.image_ids,
                other.exit_points, other.arch_ids):
            return False
        if set(self.conf_mats) != set(other.conf_mats):
            return False
        return all(
            np.array_equal(self.conf_mats[k], other.conf_mats[k])
            and np.array_equal(self.conf_tables[k], other.conf_tables[k])
            for k in self.conf_mats
        )


def build_calibration_cache(manifest: DatasetManifest,
                            placement: Optional[ExitPlacement] = None,
                            arch_sets: Optional[Mapping[int, Sequence[int]]] = None,
                            th_pix_grid: Sequence[float] = DEFAULT_TH_PIX_GRID,
                            estimator: str = "top1",
                            threads: Optional[int] = None) -> CalibrationCache:
    """Run every (image, exit point, arch) pair exactly once and tabulate it.

    `arch_sets` maps exit points to the arch ids to cache; it defaults to
    the manifest's dedicated arch ids, or ``(0,)`` for manifests with one
    shared tensor per exit.  Distinct arch ids backed by the same tensor
    file share one computation.
    """
    if placement is None:
        placement = ExitPlacement(manifest.exit_points)
    for point in placement.exit_points:
        if point not in manifest.exit_points:
            raise DimMismatch(f"exit point {point} not present in the manifest")
    if arch_sets is None:
        arch_sets = {}
        for point in placement.exit_points:
            ids = manifest.arch_ids(point)
            arch_sets[point] = ids if ids and ids[0] >= 0 else (0,)
    th_pix_grid = tuple(float(t) for t in th_pix_grid)
    m = manifest.class_count
    pairs = [(point, arch) for point in placement.exit_points
             for arch in arch_sets[point]]

    def process_image(img):
        gt = read_labels(img.label_path)
        out: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        by_path: dict[Path, tuple[np.ndarray, np.ndarray]] = {}
        for point, arch in pairs:
            path = img.prediction_path(point, arch)
            stats = by_path.get(path)
            if stats is None:
                pred = read_tensor(path)
                if pred.class_count != m:
                    raise DimMismatch(
                        f"{path}: {pred.class_count} classes, manifest says {m}"
                    )
                if (pred.rows, pred.cols) != (gt.rows, gt.cols):
                    raise DimMismatch(f"{path}: dims differ from the label map")
                cm = confusion_matrix(pred.argmax_labels(), gt, m)
                cmap, enhanced = confidence_maps(pred, estimator,
                                                 img.output_stride[point])
                table = np.empty((len(th_pix_grid), 2), dtype=np.float64)
                for t, th in enumerate(th_pix_grid):
                    table[t, 0] = image_confidence(cmap, th)
                    table[t, 1] = image_confidence(enhanced, th)
                stats = (cm, table)
                by_path[path] = stats
            out[(point, arch)] = stats
        return out

    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_image = list(pool.map(process_image, manifest.images))
    else:
        per_image = [process_image(img) for img in manifest.images]

    n = len(manifest.images)
    conf_mats = {}
    conf_tables = {}
    for key in pairs:
        conf_mats[key] = np.stack([per_image[i][key][0] for i in range(n)])
        conf_tables[key] = np.stack([per_image[i][key][1] for i in range(n)])
    return CalibrationCache(
        class_count=m,
        estimator=estimator,
        th_pix_grid=th_pix_grid,
        image_ids=[img.image_id for img in manifest.images],
        exit_points=placement.exit_points,
        arch_ids=arch_sets,
        conf_mats=conf_mats,
        conf_tables=conf_tables,
        background_class=manifest.background_class,
    )


# ---------------------------------------------------------------------------
# Config evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    cost: float
    exit_rates: tuple[float, ...]


def evaluate_config(config: MessConfig, cache: CalibrationCache,
                    profile: CostProfile, cost_kind: str = "workload") -> EvalResult:
    """Accuracy, cost and propagation rates of a config on the calibration set.

    Input-dependent configs walk each image through the selected exits in
    depth order, stopping at the first confident exit (the deepest always
    terminates); accuracy is the dataset mIoU of the stitched predictions.
    Anytime accuracy is the shallowest selected exit's mIoU (the weakest
    checkpoint a consumer may observe); budgeted and final-only use the
    single selected exit's mIoU.
    """
    selected = config.selected()
    for _, point, sel in selected:
        cache._require(point, sel.arch.arch_id)

    if config.setting != "input_dependent":
        if config.setting == "anytime":
            point, sel = selected[0][1], selected[0][2]
            rates = (1.0,) * len(selected)
        else:
            point, sel = selected[0][1], selected[0][2]
            rates = (1.0,)
        accuracy = cache.dataset_miou(point, sel.arch.arch_id)
        cost = cost_of(config, profile, None, cost_kind)
        return EvalResult(accuracy, cost, rates)

    remaining = np.ones(cache.n_images, dtype=bool)
    total_cm = np.zeros((cache.class_count, cache.class_count), dtype=np.int64)
    rates = []
    for idx, (_, point, sel) in enumerate(selected):
        rates.append(float(remaining.mean()))
        if idx == len(selected) - 1:
            exiting = remaining
        else:
            confident = cache.exit_mask(point, sel.arch.arch_id, sel.thresholds)
            exiting = remaining & confident
        if exiting.any():
            total_cm += cache.conf_mats[(point, sel.arch.arch_id)][exiting].sum(axis=0)
        remaining = remaining & ~exiting
    accuracy = miou(total_cm)
    cost = cost_of(config, profile, tuple(rates), cost_kind)
    return EvalResult(accuracy, cost, tuple(rates))


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchResult:
    feasible: bool
    config: MessConfig
    accuracy: float
    cost: float
    exit_rates: tuple[float, ...]
    objective: SearchObjective
    estimator: str
    n_evaluated: int = 0
    n_pruned: int = 0


def _config_key(config: MessConfig) -> tuple:
    sel = config.selected()
    th_keys = tuple(
        (-1.0, -1.0, -1) if s.thresholds is None
        else (s.thresholds.th_img, s.thresholds.th_pix, int(s.thresholds.edge_enhancement))
        for _, _, s in sel
    )
    return (
        len(sel),
        tuple(point for _, point, _ in sel),
        tuple(s.arch.arch_id for _, _, s in sel),
        th_keys,
    )


def _feasible_key(mode: str, result: EvalResult, config: MessConfig) -> tuple:
    if mode == "min_cost":
        return (result.cost,) + _config_key(config)
    return (-result.accuracy, result.cost) + _config_key(config)


def _violating_key(mode: str, result: EvalResult, config: MessConfig) -> tuple:
    if mode == "min_cost":
        return (-result.accuracy, result.cost) + _config_key(config)
    return (result.cost, -result.accuracy) + _config_key(config)


def _cost_lower_bound(config: MessConfig, profile: CostProfile, cost_kind: str) -> float:
    if config.setting != "input_dependent":
        return cost_of(config, profile, None, cost_kind)
    _, point, sel = config.selected()[0]
    return profile.segment_cost(0, point, cost_kind) \
        + profile.head_cost(point, sel.arch.arch_id, cost_kind)


def _skeleton_admissible(setting: str, positions: Sequence[int],
                         n_points: int, limits: SearchLimits) -> bool:
    if setting in ("budgeted", "final_only"):
        if len(positions) != 1:
            return False
        if setting == "final_only" and positions[0] != n_points - 1:
            return False
        return True
    return len(positions) <= limits.max_exits


def _configs_from_skeleton(skeleton: ConfigSkeleton, setting: str,
                           placement: ExitPlacement, limits: SearchLimits,
                           th_pix_grid: tuple[float, ...]) -> Iterator[MessConfig]:
    positions = [i for i, a in enumerate(skeleton) if a is not None]
    if setting != "input_dependent":
        exits = tuple(SelectedExit(a) if a is not None else None for a in skeleton)
        yield MessConfig(setting, placement, exits)
        return
    options = [
        ExitThresholds(tp, ti, enh)
        for ti in limits.th_img_grid
        for tp in th_pix_grid
        for enh in limits.enhancement_options
    ]
    upstream = positions[:-1]
    for assignment in itertools.product(options, repeat=len(upstream)):
        exits: list[Optional[SelectedExit]] = [None] * len(skeleton)
        for pos, th in zip(upstream, assignment):
            exits[pos] = SelectedExit(skeleton[pos], th)
        exits[positions[-1]] = SelectedExit(skeleton[positions[-1]])
        yield MessConfig(setting, placement, tuple(exits))


def search(objective: SearchObjective, cache: CalibrationCache,
           profile: CostProfile, setting: str,
           limits: Optional[SearchLimits] = None) -> SearchResult:
    """Exhaustively solve the constrained objective over the config space.

    The enumeration is complete, so the result matches naive full
    enumeration; pruning only skips candidates that provably cannot beat
    the incumbent (cost lower bounds are checked before any accuracy
    evaluation, and no pruning happens until a feasible incumbent
    exists, which keeps the infeasible report exact).  When no config
    meets the constraint the result carries ``feasible=False`` and the
    least-violating config.
    """
    if setting not in SETTINGS:
        raise ConfigSettingMismatch(f"unknown setting {setting!r}")
    limits = limits if limits is not None else SearchLimits()
    placement = ExitPlacement(cache.exit_points)
    availability: dict[int, list[ExitArch]] = {}
    source = limits.arch_availability or cache.arch_ids
    for point in placement.exit_points:
        availability[point] = [ExitArch.from_id(a) for a in source.get(point, ())]
    if limits.th_pix_grid is not None:
        th_pix_grid = tuple(float(t) for t in limits.th_pix_grid)
        for th in th_pix_grid:
            cache.th_index(th)
    else:
        th_pix_grid = cache.th_pix_grid

    best: Optional[tuple[tuple, MessConfig, EvalResult]] = None
    violating: Optional[tuple[tuple, MessConfig, EvalResult]] = None
    n_eval = 0
    n_pruned = 0
    saw_candidate = False
    for skeleton in enumerate_space(placement, availability):
        positions = [i for i, a in enumerate(skeleton) if a is not None]
        if not _skeleton_admissible(setting, positions, placement.count, limits):
            continue
        for config in _configs_from_skeleton(skeleton, setting, placement,
                                             limits, th_pix_grid):
            saw_candidate = True
            if best is not None:
                bound = _cost_lower_bound(config, profile, objective.cost_kind)
                limit = best[2].cost if objective.mode == "min_cost" else objective.threshold
                if bound > limit:
                    n_pruned += 1
                    continue
            result = evaluate_config(config, cache, profile, objective.cost_kind)
            n_eval += 1
            if objective.mode == "min_cost":
                feasible = result.accuracy >= objective.threshold
            else:
                feasible = result.cost <= objective.threshold
            if feasible:
                key = _feasible_key(objective.mode, result, config)
                if best is None or key < best[0]:
                    best = (key, config, result)
            elif best is None:
                key = _violating_key(objective.mode, result, config)
                if violating is None or key < violating[0]:
                    violating = (key, config, result)
    if not saw_candidate:
        raise EmptySpace(f"no candidate configuration for setting {setting!r}")
    chosen = best if best is not None else violating
    _, config, result = chosen
    return SearchResult(
        feasible=best is not None,
        config=config,
        accuracy=result.accuracy,
        cost=result.cost,
        exit_rates=result.exit_rates,
        objective=objective,
        estimator=cache.estimator,
        n_evaluated=n_eval,
        n_pruned=n_pruned,
    )


# ---------------------------------------------------------------------------
# Instances (search output, consumed by the simulator)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MessInstance:
    """A deployable configuration plus the estimator and search-time predictions."""

    config: MessConfig
    estimator: str = "top1"
    feasible: bool = True
    predicted_accuracy: Optional[float] = None
    predicted_cost: Optional[float] = None
    predicted_exit_rates: Optional[tuple[float, ...]] = None
    objective: Optional[SearchObjective] = None


def instance_from_result(result: SearchResult) -> MessInstance:
    return MessInstance(
        config=result.config,
        estimator=result.estimator,
        feasible=result.feasible,
        predicted_accuracy=result.accuracy,
        predicted_cost=result.cost,
        predicted_exit_rates=result.exit_rates,
        objective=result.objective,
    )


def save_instance(instance: MessInstance, path: Union[str, Path]) -> None:
    config = instance.config
    exits = []
    for _, point, sel in config.selected():
        entry: dict = {"exit_point": point, "arch_id": sel.arch.arch_id}
        if sel.thresholds is not None:
            entry.update(
                th_pix=sel.thresholds.th_pix,
                th_img=sel.thresholds.th_img,
                edge_enhancement=sel.thresholds.edge_enhancement,
            )
        exits.append(entry)
    doc = {
        "schema_version": 1,
        "setting": config.setting,
        "estimator": instance.estimator,
        "feasible": instance.feasible,
        "placement": list(config.placement.exit_points),
        "exits": exits,
        "predicted": {
            "accuracy": instance.predicted_accuracy,
            "cost": instance.predicted_cost,
            "exit_rates": list(instance.predicted_exit_rates)
            if instance.predicted_exit_rates is not None else None,
        },
    }
    if instance.objective is not None:
        doc["objective"] = {
            "mode": instance.objective.mode,
            "threshold": instance.objective.threshold,
            "cost_kind": instance.objective.cost_kind,
        }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_instance(path: Union[str, Path]) -> MessInstance:
    doc = json.loads(Path(path).read_text())
    placement = ExitPlacement(tuple(doc["placement"]))
    slots: list[Optional[SelectedExit]] = [None] * placement.count
    for entry in doc["exits"]:
        idx = placement.exit_points.index(entry["exit_point"])
        thresholds = None
        if "th_img" in entry:
            thresholds = ExitThresholds(
                th_pix=entry["th_pix"],
                th_img=entry["th_img"],
                edge_enhancement=entry.get("edge_enhancement", False),
            )
        slots[idx] = SelectedExit(ExitArch.from_id(entry["arch_id"]), thresholds)
    config = MessConfig(doc["setting"], placement, tuple(slots))
    objective = None
    if "objective" in doc:
        objective = SearchObjective(
            mode=doc["objective"]["mode"],
            threshold=doc["objective"]["threshold"],
            cost_kind=doc["objective"].get("cost_kind", "workload"),
        )
    predicted = doc.get("predicted", {})
    rates = predicted.get("exit_rates")
    return MessInstance(
        config=config,
        estimator=doc.get("estimator", "top1"),
        feasible=doc.get("feasible", True),
        predicted_accuracy=predicted.get("accuracy"),
        predicted_cost=predicted.get("cost"),
        predicted_exit_rates=tuple(rates) if rates is not None else None,
        objective=objective,
    )
