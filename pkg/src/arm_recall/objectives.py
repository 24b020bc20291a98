"""Scalar losses and regularisers used for learning and for recall.

All logs are natural logs.  Everything here is a pure function of its
arguments and returns a scalar :class:`~arm_recall.tensor.Tensor`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError, LabelError
from .tensor import Tensor

if TYPE_CHECKING:
    from .model import ModelParams


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the recall objective and the distillation step.

    ``distill_recalled`` / ``distill_real`` weight the distillation loss on
    recalled and real inputs; ``avoid_old`` / ``avoid_new`` weight the
    cross-entropy towards current-batch classes under the snapshot and the live
    model (pushing recall away from those classes); ``diversity`` weights the
    entropy of the batch-mean recalled prediction; ``sharpen``, ``l2`` and
    ``tv`` are subtracted.  ``divergence`` multiplies the divergence term.
    Defaults are the MNIST values.
    """

    distill_recalled: float = 1.0
    distill_real: float = 1.0
    avoid_old: float = 1.0
    avoid_new: float = 0.1
    diversity: float = 16.0
    sharpen: float = 0.1
    l2: float = 1.0
    tv: float = 1.0
    divergence: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ConfigurationError(f"loss weight {f.name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def _target_matrix(target, n: int, c: int) -> Tensor:
    if isinstance(target, Tensor):
        if target.shape != (n, c):
            raise DimensionError(f"soft target shape {target.shape} does not match ({n}, {c})")
        return target
    arr = np.asarray(target)
    if arr.ndim == 1:
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise LabelError("hard targets must be integer class ids")
            arr = arr.astype(np.int64)
        if arr.shape[0] != n:
            raise DimensionError(f"{arr.shape[0]} labels for {n} rows")
        if np.any(arr < 0) or np.any(arr >= c):
            raise LabelError(f"class index out of range [0, {c}): {arr[(arr < 0) | (arr >= c)][:5]}")
        onehot = np.zeros((n, c))
        onehot[np.arange(n), arr] = 1.0
        return Tensor(onehot)
    if arr.shape != (n, c):
        raise DimensionError(f"soft target shape {arr.shape} does not match ({n}, {c})")
    return Tensor(arr)


def cross_entropy(pred_logits: Tensor, target, reduction: str = "mean") -> Tensor:
    """``-sum_c target_c * log_softmax(pred)_c`` per row, then mean (or sum) over rows.

    ``target`` is either a length-n vector of class ids or an n x C matrix of
    distributions; a Tensor target keeps its own graph.
    """
    n, c = pred_logits.shape
    tgt = _target_matrix(target, n, c)
    per_row = -(tgt * T.log_softmax(pred_logits)).sum(axis=1)
    if reduction == "sum":
        return per_row.sum()
    if reduction == "none":
        return per_row
    return per_row.mean()


def entropy(probs: Tensor) -> Tensor:
    """Mean over rows of the Shannon entropy of each row."""
    return -T.xlogx(probs).sum(axis=1).mean()


def js_divergence(p_logits: Tensor, q_logits: Tensor) -> Tensor:
    """Jensen-Shannon divergence between row-wise softmaxes, averaged over rows."""
    if p_logits.shape != q_logits.shape:
        raise DimensionError(f"js_divergence: shapes {p_logits.shape} and {q_logits.shape} differ")
    p = T.softmax(p_logits)
    q = T.softmax(q_logits)
    m = (p + q) * 0.5
    # 1/2 KL(p||m) + 1/2 KL(q||m) == 1/2 (sum p log p + sum q log q) - sum m log m
    per_elem = (T.xlogx(p) + T.xlogx(q)) * 0.5 - T.xlogx(m)
    return per_elem.sum(axis=1).mean()


def batch_entropy(soft_preds: Tensor) -> Tensor:
    """Entropy of the column-mean distribution of a batch of predictions."""
    mean_pred = soft_preds.mean(axis=0)
    return -T.xlogx(mean_pred).sum()


def sharpening_term(soft_preds: Tensor) -> Tensor:
    """Mean of ``-log(max_c p_c)``: cross-entropy of each row against its own argmax."""
    n, c = soft_preds.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), np.argmax(soft_preds.data, axis=1)] = 1.0
    top = (soft_preds * onehot).sum(axis=1)
    return -T.log(top).mean()


def _sharpening_from_log_probs(log_probs: Tensor) -> Tensor:
    n, c = log_probs.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), np.argmax(log_probs.data, axis=1)] = 1.0
    return -(log_probs * onehot).sum(axis=1).mean()


PRIOR_REDUCTIONS = ("sample_sum", "element_mean")


def input_priors(x: Tensor, spatial: tuple[int, int] | None = None, tv: bool = True,
                 reduction: str = "sample_sum"):
    """Return ``(l2, tv)``: per-sample sum of squares and anisotropic total variation,
    each averaged over samples.

    ``x`` is M x D (``spatial`` gives the H x W layout of D) or already M x H x W.
    With ``tv=False`` the second element is None.  ``reduction="element_mean"``
    additionally divides both by D, so their gradients stay O(1) per pixel.
    """
    if reduction not in PRIOR_REDUCTIONS:
        raise ConfigurationError(f"prior reduction must be one of {PRIOR_REDUCTIONS}, got {reduction!r}")
    m = x.shape[0]
    flat = x.reshape(m, -1) if x.ndim != 2 else x
    scale = 1.0 / m if reduction == "sample_sum" else 1.0 / (m * flat.shape[1])
    l2 = T.square(flat).sum() * scale
    if not tv:
        return l2, None
    if x.ndim == 3:
        img = x
    elif spatial is None:
        raise ConfigurationError("total variation needs a spatial (H, W) layout for the input")
    else:
        h, w = spatial
        if h * w != flat.shape[1]:
            raise ConfigurationError(f"spatial layout {spatial} does not match input width {flat.shape[1]}")
        img = flat.reshape(m, h, w)
    dh = img[:, :, 1:] - img[:, :, :-1]
    dv = img[:, 1:, :] - img[:, :-1, :]
    total = T.tabs(dh).sum() + T.tabs(dv).sum()
    return l2, total * scale


def class_set_penalty(logits: Tensor, classes: Sequence[int]) -> Tensor:
    """``(1/|S|) sum_{y in S} CE(logits, y)`` for the class set S."""
    classes = sorted(set(int(c) for c in classes))
    if not classes:
        raise ContractError("class set is empty")
    mask = np.zeros(logits.shape[1])
    mask[classes] = 1.0
    return -(T.log_softmax(logits) * mask).sum(axis=1).mean() * (1.0 / len(classes))


def recall_objective(
    x_hat: Tensor,
    batch_labels,
    old: "ModelParams",
    new: "ModelParams",
    weights: LossWeights,
    *,
    spatial: tuple[int, int] | None = None,
    divergence_mode: str = "js",
    prior_reduction: str = "sample_sum",
) -> Tensor:
    """Objective that recall *maximises* over ``x_hat``.

    divergence(new, old) + avoidance of current-batch classes under both models
    + diversity entropy of the snapshot's batch predictions - sharpening
    - L2 - TV.  ``old`` is the lagged snapshot, ``new`` the live parameters.
    """
    from .model import forward

    if tuple(old.dims) != tuple(new.dims):
        raise ContractError(f"snapshot dims {old.dims} differ from live dims {new.dims}")
    labels = np.unique(np.asarray(batch_labels))
    if labels.size == 0:
        raise ContractError("real batch has no labels")
    w = weights
    old_logits = forward(old, x_hat)
    new_logits = forward(new, x_hat)

    if divergence_mode == "js":
        div = js_divergence(new_logits, old_logits)
    elif divergence_mode == "cross_entropy":
        div = cross_entropy(new_logits, T.softmax(old_logits))
    else:
        raise ConfigurationError(f"unknown divergence mode {divergence_mode!r}")
    total = div * w.divergence

    if w.avoid_old:
        total = total + class_set_penalty(old_logits, labels) * w.avoid_old
    if w.avoid_new:
        total = total + class_set_penalty(new_logits, labels) * w.avoid_new
    old_log_probs = T.log_softmax(old_logits)
    if w.diversity:
        total = total + batch_entropy(T.exp(old_log_probs)) * w.diversity
    if w.sharpen:
        total = total - _sharpening_from_log_probs(old_log_probs) * w.sharpen
    if w.l2 or w.tv:
        l2, tv = input_priors(x_hat, spatial, tv=bool(w.tv), reduction=prior_reduction)
        if w.l2:
            total = total - l2 * w.l2
        if w.tv:
            total = total - tv * w.tv
    return total
