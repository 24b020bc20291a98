"""Continual learning by recall: replay inputs synthesised by gradient ascent on the
input so that an old snapshot and the live classifier disagree, then distilled
back into the live model.

Everything runs on a small float64 reverse-mode autodiff core (:mod:`.tensor`).
"""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .data import Dataset, TaskStream, build_stationary_stream, build_task_stream, load_idx, make_blobs
from .metrics import AccuracyMatrix, average_accuracy, evaluate, forgetting, gradient_correlation_study
from .model import LagPolicy, ModelParams, ModelSnapshot, forward, init_mlp, take_snapshot
from .objectives import LossWeights, recall_objective
from .recall import RecallConfig, generate_recall
from .trainer import RunRecord, TrainConfig, train

__all__ = [
    "AccuracyMatrix",
    "Dataset",
    "LagPolicy",
    "LossWeights",
    "ModelParams",
    "ModelSnapshot",
    "RecallConfig",
    "RunRecord",
    "TaskStream",
    "TrainConfig",
    "average_accuracy",
    "build_stationary_stream",
    "build_task_stream",
    "evaluate",
    "forgetting",
    "forward",
    "generate_recall",
    "gradient_correlation_study",
    "init_mlp",
    "load_idx",
    "make_blobs",
    "recall_objective",
    "take_snapshot",
    "train",
    "__version__",
]
