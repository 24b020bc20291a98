"""Synthesis of replay batches by projected gradient ascent on the input."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError
from .model import ModelParams, ModelSnapshot, predict_logits, softmax_np
from .objectives import PRIOR_REDUCTIONS, LossWeights, recall_objective

logger = logging.getLogger(__name__)

INIT_MODES = ("from_real_batch", "random_noise", "identity")


@dataclass(frozen=True)
class RecallConfig:
    batch_size: int = 10
    steps: int = 10
    rate: float = 25.0
    init_mode: str = "from_real_batch"
    clamp_range: tuple[float, float] = (0.0, 1.0)
    weights: LossWeights = field(default_factory=LossWeights)
    divergence_mode: str = "js"
    spatial: tuple[int, int] | None = None
    # the L2 / TV priors are averaged per pixel; "sample_sum" sums them per sample
    prior_reduction: str = "element_mean"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("recall batch_size must be >= 1")
        # steps == 0 is the no-optimisation (LwF) degenerate case
        if self.steps < 0:
            raise ConfigurationError("recall steps must be >= 0")
        if not self.rate > 0:
            raise ConfigurationError("recall rate must be > 0")
        if self.init_mode not in INIT_MODES:
            raise ConfigurationError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if self.divergence_mode not in ("js", "cross_entropy"):
            raise ConfigurationError(f"unknown divergence mode {self.divergence_mode!r}")
        if self.prior_reduction not in PRIOR_REDUCTIONS:
            raise ConfigurationError(f"prior_reduction must be one of {PRIOR_REDUCTIONS}")
        lo, hi = self.clamp_range
        if not lo < hi:
            raise ConfigurationError("clamp_range must be increasing")


class AscentStep(NamedTuple):
    x: np.ndarray
    objective: float
    ok: bool


@dataclass
class RecallBatch:
    x: np.ndarray
    soft_targets: np.ndarray
    originators: np.ndarray  # init-source label per row, -1 for noise init
    objectives: list[float]
    steps_run: int
    skipped: bool = False

    @property
    def targets(self) -> np.ndarray:
        return np.argmax(self.soft_targets, axis=1)


def init_recall_batch(real_x: np.ndarray, cfg: RecallConfig, rng: np.random.Generator):
    """Starting point for recall and the row index each start was copied from.

    Indices are drawn uniformly with replacement; noise init draws uniform values
    in the clamp range and reports index -1.
    """
    real_x = np.asarray(real_x, dtype=np.float64)
    n = real_x.shape[0]
    if n < 1:
        raise ContractError("cannot initialise recall from an empty real batch")
    m = cfg.batch_size
    if cfg.init_mode == "random_noise":
        lo, hi = cfg.clamp_range
        return rng.uniform(lo, hi, size=(m, real_x.shape[1])), np.full(m, -1)
    if cfg.init_mode == "identity":
        idx = np.arange(m) % n
    else:
        idx = rng.integers(0, n, size=m)
    return real_x[idx].copy(), idx


def recall_step(
    x_hat: np.ndarray,
    batch_labels,
    old: ModelSnapshot | ModelParams,
    new: ModelParams,
    cfg: RecallConfig,
) -> AscentStep:
    """One ascent step on the recall objective, then clamp.

    On a non-finite objective or gradient the input comes back unchanged with
    ``ok=False``.
    """
    old_p = old.params if isinstance(old, ModelSnapshot) else old.frozen()
    leaf = T.Tensor(x_hat, requires_grad=True)
    try:
        value = recall_objective(leaf, batch_labels, old_p, new.frozen(), cfg.weights,
                                 spatial=cfg.spatial, divergence_mode=cfg.divergence_mode,
                                 prior_reduction=cfg.prior_reduction)
        T.backward(value)
    except ArithmeticError as exc:
        logger.warning("recall step aborted: %s", exc)
        return AscentStep(x_hat, float("nan"), False)
    grad = leaf.grad if leaf.grad is not None else np.zeros_like(x_hat)
    if not (np.all(np.isfinite(grad)) and np.isfinite(value.item())):
        logger.warning("recall step aborted: non-finite gradient")
        return AscentStep(x_hat, float("nan"), False)
    lo, hi = cfg.clamp_range
    return AscentStep(np.clip(x_hat + cfg.rate * grad, lo, hi), value.item(), True)


def generate_recall(
    real_x: np.ndarray,
    real_y: np.ndarray,
    old: ModelSnapshot,
    new: ModelParams,
    cfg: RecallConfig,
    rng: np.random.Generator,
) -> RecallBatch:
    """Initialise from the real batch, ascend ``cfg.steps`` times, label with the snapshot."""
    x_hat, idx = init_recall_batch(real_x, cfg, rng)
    real_y = np.asarray(real_y)
    originators = np.where(idx >= 0, real_y[np.maximum(idx, 0)], -1)
    objectives = []
    steps = 0
    for _ in range(cfg.steps):
        step = recall_step(x_hat, real_y, old, new, cfg)
        steps += 1
        if not step.ok:
            return RecallBatch(x_hat, np.full((cfg.batch_size, old.dims[-1]), np.nan), originators,
                               objectives, steps, skipped=True)
        objectives.append(step.objective)
        x_hat = step.x
    soft = softmax_np(predict_logits(old, x_hat))
    return RecallBatch(x_hat, soft, originators, objectives, steps)
