"""messkit: post-training tuning toolkit for multi-exit segmentation networks.

Given per-exit calibration-set predictions and a workload profile, the
toolkit places exits, enumerates exit-architecture configurations,
searches for cost/accuracy-optimal instances under four inference
settings, tunes confidence-based exit policies, and simulates
deployment.  It also ships forward-only evaluators for the two
multi-exit training losses, for validating external training pipelines.
"""

from .confidence import (
    ExitThresholds,
    enhance_confidence_map,
    exit_decision,
    image_confidence,
    pixel_confidence_map,
    semantic_edge_mask,
)
from .errors import MessError
from .losses import LossReport, cross_entropy, kl_divergence, pfd_loss, pretrain_loss
from .metrics import confusion_matrix, miou, per_class_iou, pixel_accuracy
from .profiling import ExitPlacement, place_exit_points, segment_workloads
from .search import (
    CalibrationCache,
    EvalResult,
    ExitArch,
    MessConfig,
    MessInstance,
    SearchLimits,
    SearchObjective,
    SearchResult,
    SelectedExit,
    build_calibration_cache,
    cost_of,
    enumerate_space,
    evaluate_config,
    instance_from_result,
    load_instance,
    save_instance,
    search,
)
from .simulate import (
    FixtureSet,
    SimulationReport,
    gen_synthetic_fixtures,
    load_fixture_set,
    simulate,
)
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

__version__ = "0.1.0"
