"""Continual-learning metrics, recall density histories and the gradient-correlation study."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import Dataset
from .errors import ContractError
from .model import ModelParams, forward, predict_logits
from .objectives import cross_entropy


class AccuracyMatrix:
    """``a[i, j]``: test accuracy (percent) on task j after training task i.

    Indices are 0-based internally; the metric functions take a 1-based task count.
    Unfilled entries are NaN.
    """

    def __init__(self, num_tasks: int, values: np.ndarray | None = None):
        self.num_tasks = num_tasks
        self.a = np.full((num_tasks, num_tasks), np.nan) if values is None else np.array(values, dtype=float)
        if self.a.shape != (num_tasks, num_tasks):
            raise ContractError(f"accuracy matrix must be {num_tasks}x{num_tasks}")

    def set_row(self, i: int, accuracies: Sequence[float]) -> None:
        acc = np.asarray(accuracies, dtype=float)
        if np.any(acc < 0) or np.any(acc > 100):
            raise ContractError("accuracies must lie in [0, 100]")
        self.a[i] = acc

    def filled_rows(self) -> int:
        return int(np.sum(~np.isnan(self.a).any(axis=1)))

    def __getitem__(self, idx):
        return self.a[idx]


def _row(m, T_: int) -> np.ndarray:
    a = m.a if isinstance(m, AccuracyMatrix) else np.asarray(m, dtype=float)
    if T_ < 1 or T_ > a.shape[0]:
        raise ContractError(f"task count {T_} outside 1..{a.shape[0]}")
    row = a[T_ - 1, :T_]
    if np.any(np.isnan(row)):
        raise ContractError(f"row {T_} of the accuracy matrix is incomplete")
    return a


def average_accuracy(m, T_: int) -> float:
    a = _row(m, T_)
    return float(np.mean(a[T_ - 1, :T_]))


def forgetting(m, T_: int) -> float:
    """Mean over earlier tasks of (best earlier accuracy - accuracy after task T)."""
    if T_ < 2:
        raise ContractError("forgetting needs at least two tasks")
    a = _row(m, T_)
    drops = [np.max(a[:T_ - 1, j]) - a[T_ - 1, j] for j in range(T_ - 1)]
    return float(np.mean(drops))


def evaluate(params, test: Dataset, tasks: Sequence[Sequence[int]]) -> list[float]:
    """Per-task accuracy (percent), argmax over all output classes."""
    pred = np.argmax(predict_logits(params, test.inputs), axis=1)
    out = []
    for classes in tasks:
        mask = np.isin(test.labels, list(classes))
        if not mask.any():
            raise ContractError(f"no test samples for task classes {tuple(classes)}")
        out.append(100.0 * float(np.mean(pred[mask] == test.labels[mask])))
    return out


def recall_density(recall_counts: dict[int, np.ndarray] | Sequence[tuple[int, int, int]],
                   num_classes: int, total_steps: int, bins: int) -> np.ndarray:
    """Counts of recalled argmax classes binned over training steps: ``bins x num_classes``.

    ``recall_counts`` is either ``{step: counts}`` or rows ``(step, class, count)``.
    """
    if recall_counts is None:
        raise ContractError("run carries no recall log")
    out = np.zeros((bins, num_classes), dtype=np.int64)
    edges = np.linspace(0, total_steps, bins + 1)
    if isinstance(recall_counts, dict):
        rows = [(s, c, n) for s, counts in recall_counts.items() for c, n in enumerate(counts) if n]
    else:
        rows = recall_counts
    for step, cls, count in rows:
        b = min(int(np.searchsorted(edges, step, side="right")) - 1, bins - 1)
        out[b, int(cls)] += int(count)
    return out


# ---------------------------------------------------------------------------
# gradient correlation study


@dataclass
class GradCorrRecord:
    target_mode: str
    layers: list[str]
    class1_mean: list[float]
    class1_std: list[float]
    class2_mean: list[float]
    class2_std: list[float]
    num_samples: int
    per_sample: dict = field(default_factory=dict, repr=False)

    def rows(self):
        for i, name in enumerate(self.layers):
            yield name, self.class1_mean[i], self.class1_std[i], self.class2_mean[i], self.class2_std[i]


def _block_grads(params: ModelParams, x: np.ndarray, target) -> list[np.ndarray]:
    live = ModelParams.from_arrays(params.dims, params.arrays())
    loss = cross_entropy(forward(live, x[None, :]), target)
    T.backward(loss)
    return [g.ravel() for g in live.grads()]


def _normalise(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def gradient_correlation_study(
    params: ModelParams,
    recalled_x: np.ndarray,
    originators: np.ndarray,
    soft_targets: np.ndarray,
    real: Dataset,
    samples: int = 200,
    target_mode: str = "hard",
    seed: int = 0,
) -> GradCorrRecord:
    """Correlate per-block gradients of recalled samples with those of real samples.

    For each recalled sample the distillation gradient (hard: one-hot argmax of
    its soft target; soft: the soft target itself) is compared, block by block
    (each weight matrix and bias vector, flattened and unit-normalised), against
    the hard-label gradient of one random real sample of the originator class
    (class 1) and one of the target class (class 2).  A layer's value for a
    sample is the mean over its blocks; the last row, "All", averages every block.
    """
    if target_mode not in ("hard", "soft"):
        raise ValueError(f"target_mode must be 'hard' or 'soft', got {target_mode!r}")
    recalled_x = np.asarray(recalled_x, dtype=float)
    originators = np.asarray(originators)
    soft_targets = np.asarray(soft_targets, dtype=float)
    targets = np.argmax(soft_targets, axis=1)
    keep = np.flatnonzero(originators >= 0)
    rng = np.random.default_rng(seed)
    if keep.size > samples:
        keep = np.sort(rng.choice(keep, size=samples, replace=False))
    by_class = {c: np.flatnonzero(real.labels == c) for c in range(real.class_count)}
    n_layers = len(params.weights)
    c1 = np.zeros((keep.size, n_layers + 1))
    c2 = np.zeros((keep.size, n_layers + 1))
    for row, i in enumerate(keep):
        k1, k2 = int(originators[i]), int(targets[i])
        for k in (k1, k2):
            if by_class[k].size == 0:
                raise ContractError(f"no real samples of class {k}")
        if target_mode == "hard":
            tgt = np.array([k2])
        else:
            tgt = soft_targets[i][None, :]
        g_hat = [_normalise(g) for g in _block_grads(params, recalled_x[i], tgt)]
        j1 = rng.choice(by_class[k1])
        j2 = rng.choice(by_class[k2])
        g1 = [_normalise(g) for g in _block_grads(params, real.inputs[j1], np.array([k1]))]
        g2 = [_normalise(g) for g in _block_grads(params, real.inputs[j2], np.array([k2]))]
        d1 = np.array([a @ b for a, b in zip(g_hat, g1)])
        d2 = np.array([a @ b for a, b in zip(g_hat, g2)])
        # blocks are (W, b) per layer
        c1[row, :n_layers] = d1.reshape(n_layers, 2).mean(axis=1)
        c2[row, :n_layers] = d2.reshape(n_layers, 2).mean(axis=1)
        c1[row, n_layers] = d1.mean()
        c2[row, n_layers] = d2.mean()
    names = [f"FC {i + 1}" for i in range(n_layers)] + ["All"]
    return GradCorrRecord(
        target_mode=target_mode,
        layers=names,
        class1_mean=list(c1.mean(axis=0)) if keep.size else [np.nan] * len(names),
        class1_std=list(c1.std(axis=0)) if keep.size else [np.nan] * len(names),
        class2_mean=list(c2.mean(axis=0)) if keep.size else [np.nan] * len(names),
        class2_std=list(c2.std(axis=0)) if keep.size else [np.nan] * len(names),
        num_samples=int(keep.size),
        per_sample={"class1": c1, "class2": c2},
    )
