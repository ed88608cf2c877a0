"""mess-exporter: bridge from a torch training environment to messkit fixtures."""

from .data import N_CLASSES, make_split
from .export import ExportJob, ExportResult, export
from .model import (
    CheckpointMismatch,
    ToyMultiExitNet,
    UnexportableExitPoint,
    block_workloads,
    head_workload,
    load_checkpoint,
    save_checkpoint,
)
from .train import exit_dropout_loss, pfd_batch_loss, plain_ce_loss, train_toy

__version__ = "0.1.0"
