"""Online class-incremental training: ARM and the naive / ER / LwF baselines."""
from __future__ import annotations

import dataclasses
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import tensor as T
from .data import Dataset, TaskStream
from .errors import ConfigurationError
from .metrics import AccuracyMatrix, average_accuracy, evaluate, forgetting
from .model import (
    LagPolicy,
    ModelParams,
    forward,
    init_mlp,
    maybe_update_snapshot,
    predict_logits,
    sgd_update,
    softmax_np,
    take_snapshot,
)
from .objectives import cross_entropy, js_divergence
from .recall import RecallConfig, generate_recall

logger = logging.getLogger(__name__)

METHODS = ("arm", "naive", "er", "lwf")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "arm"
    lr: float = 0.05
    hidden: int = 400
    recall: RecallConfig = field(default_factory=RecallConfig)
    lag: LagPolicy = field(default_factory=LagPolicy)
    recalls_per_step: int = 1
    er_buffer_size: int = 50
    er_replay_size: int = 10
    stationary: bool = False
    eval_every: int = 0
    dump_capacity: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.lr > 0:
            raise ConfigurationError("lr must be > 0")
        if self.recalls_per_step < 0:
            raise ConfigurationError("recalls_per_step must be >= 0")
        if self.method == "er" and (self.er_buffer_size < 1 or self.er_replay_size < 1):
            raise ConfigurationError("ER needs er_buffer_size >= 1 and er_replay_size >= 1")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class RunRecord:
    config: dict
    seed: int
    num_classes: int
    num_tasks: int
    total_steps: int = 0
    step_log: list[dict] = field(default_factory=list)
    events: list[tuple[int, str]] = field(default_factory=list)
    recall_counts: dict[int, np.ndarray] = field(default_factory=dict)
    accuracy: AccuracyMatrix | None = None
    curve: list[tuple[int, list[float]]] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    status: str = "ok"
    message: str = ""
    params: ModelParams | None = None
    recall_dump: dict[str, np.ndarray] | None = None


class ReservoirBuffer:
    """Fixed-capacity uniform sample of everything offered so far."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.seen = 0
        self.items: list[Any] = []

    def __len__(self) -> int:
        return len(self.items)

    def add(self, item) -> None:
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            j = int(self.rng.integers(0, self.seen + 1))
            if j < self.capacity:
                self.items[j] = item
        self.seen += 1

    def sample(self, k: int) -> list:
        k = min(k, len(self.items))
        idx = self.rng.choice(len(self.items), size=k, replace=False)
        return [self.items[i] for i in idx]


class _Diverged(ArithmeticError):
    pass


def _sgd(params: ModelParams, loss: T.Tensor, lr: float) -> ModelParams:
    if not np.isfinite(loss.item()):
        raise _Diverged(f"non-finite loss {loss.item()}")
    params.zero_grad()
    T.backward(loss)
    return sgd_update(params, params.grads(), lr)


class _Run:
    """Shared bookkeeping for a pass over a stream."""

    def __init__(self, stream: TaskStream, cfg: TrainConfig, test: Dataset | None):
        self.stream = stream
        self.cfg = cfg
        self.test = test
        ds = stream.dataset
        self.params = init_mlp((ds.dim, cfg.hidden, cfg.hidden, ds.class_count), cfg.seed)
        self.rng = np.random.default_rng(cfg.seed + 7919)
        n_tasks = len(stream.tasks)
        self.record = RunRecord(config=cfg.to_dict(), seed=cfg.seed, num_classes=ds.class_count,
                                num_tasks=n_tasks, total_steps=len(stream))
        self.record.accuracy = AccuracyMatrix(n_tasks)
        self._dump: deque = deque(maxlen=max(cfg.dump_capacity, 0) or None)

    def learn(self, x, y, t: int) -> float:
        loss = cross_entropy(forward(self.params, x), y)
        self.params = _sgd(self.params, loss, self.cfg.lr)
        self.record.events.append((t, "learn"))
        return loss.item()

    def end_of_step(self, t: int, entry: dict) -> None:
        self.record.step_log.append(entry)
        if self.test is None:
            return
        if self.cfg.eval_every and (t + 1) % self.cfg.eval_every == 0:
            self.record.curve.append((t + 1, evaluate(self.params, self.test, self.stream.tasks)))
        if self.stream.is_task_end(t):
            k = self.stream.task_of(t)
            self.record.accuracy.set_row(k, evaluate(self.params, self.test, self.stream.tasks))

    def dump_recall(self, t: int, batch) -> None:
        if self.cfg.dump_capacity <= 0:
            return
        for i in range(batch.x.shape[0]):
            self._dump.append((t, batch.x[i], batch.originators[i], batch.soft_targets[i]))

    def finish(self) -> RunRecord:
        rec = self.record
        rec.params = self.params
        if self._dump:
            rec.recall_dump = {
                "step": np.array([d[0] for d in self._dump]),
                "x": np.stack([d[1] for d in self._dump]),
                "originator": np.array([d[2] for d in self._dump]),
                "soft_target": np.stack([d[3] for d in self._dump]),
            }
        if self.test is not None and rec.status == "ok":
            n = len(self.stream.tasks)
            rec.final["accuracy"] = average_accuracy(rec.accuracy, n)
            rec.final["forgetting"] = (forgetting(rec.accuracy, n)
                                       if n >= 2 and not self.stream.stationary else float("nan"))
        return rec


def _replay_active(stream: TaskStream, t: int) -> bool:
    # replay starts once the first task is over
    return not stream.stationary and stream.task_of(t) >= 1


def train_arm(stream: TaskStream, cfg: TrainConfig, test: Dataset | None = None) -> RunRecord:
    """Learn on each real batch, then recall and distil on recalled + real inputs."""
    run = _Run(stream, cfg, test)
    rc = cfg.recall
    if rc.spatial is None and rc.weights.tv:
        if stream.dataset.spatial is None:
            raise ConfigurationError("TV prior needs a spatial layout; set recall.spatial or weights.tv = 0")
        rc = dataclasses.replace(rc, spatial=stream.dataset.spatial)
    w = rc.weights
    snapshot = take_snapshot(run.params, 0)
    seen: set[int] = set()
    try:
        for t, (x, y) in enumerate(stream):
            snapshot = maybe_update_snapshot(snapshot, run.params, t, cfg.lag, phase="before",
                                             labels=y, seen=seen)
            seen |= set(int(v) for v in np.unique(y))
            entry = {"step": t, "task": stream.task_of(t), "loss": run.learn(x, y, t),
                     "distill_loss": float("nan"), "divergence": float("nan"), "recalled": 0}
            if _replay_active(stream, t):
                for _ in range(cfg.recalls_per_step):
                    batch = generate_recall(x, y, snapshot, run.params, rc, run.rng)
                    run.record.events.append((t, "recall"))
                    if batch.skipped:
                        logger.warning("step %d: recall skipped", t)
                        continue
                    old_real = softmax_np(predict_logits(snapshot, x))
                    m, n = batch.x.shape[0], x.shape[0]
                    new_hat = forward(run.params, batch.x)
                    loss = (cross_entropy(new_hat, batch.soft_targets, "sum") * w.distill_recalled
                            + cross_entropy(forward(run.params, x), old_real, "sum") * w.distill_real
                            ) * (1.0 / (m + n))
                    entry["divergence"] = js_divergence(new_hat.detach(),
                                                        T.Tensor(predict_logits(snapshot, batch.x))).item()
                    run.params = _sgd(run.params, loss, cfg.lr)
                    run.record.events.append((t, "distill"))
                    entry["distill_loss"] = loss.item()
                    entry["recalled"] += m
                    counts = np.bincount(batch.targets, minlength=stream.dataset.class_count)
                    prev = run.record.recall_counts.get(t)
                    run.record.recall_counts[t] = counts if prev is None else prev + counts
                    run.dump_recall(t, batch)
            snapshot = maybe_update_snapshot(snapshot, run.params, t, cfg.lag, phase="after")
            run.end_of_step(t, entry)
    except ArithmeticError as exc:  # non-finite loss or logits
        run.record.status = "aborted"
        run.record.message = f"step {t}: {exc}"
        logger.error("run aborted at step %d: %s", t, exc)
    return run.finish()


def train_naive(stream: TaskStream, cfg: TrainConfig, test: Dataset | None = None,
                stationary: bool | None = None) -> RunRecord:
    """Plain SGD over the stream.  Stationary runs expect a stream built with
    :func:`~arm_recall.data.build_stationary_stream`."""
    if stationary is not None and stationary != stream.stationary:
        raise ConfigurationError("stationary flag does not match the stream that was passed in")
    run = _Run(stream, cfg, test)
    try:
        for t, (x, y) in enumerate(stream):
            entry = {"step": t, "task": stream.task_of(t), "loss": run.learn(x, y, t),
                     "distill_loss": float("nan"), "divergence": float("nan"), "recalled": 0}
            run.end_of_step(t, entry)
    except ArithmeticError as exc:  # non-finite loss or logits
        run.record.status = "aborted"
        run.record.message = f"step {t}: {exc}"
    return run.finish()


def train_er(stream: TaskStream, cfg: TrainConfig, test: Dataset | None = None) -> RunRecord:
    """Experience replay: each step trains on the real batch plus a uniform draw
    from a reservoir buffer of past examples."""
    run = _Run(stream, cfg, test)
    buffer = ReservoirBuffer(cfg.er_buffer_size, np.random.default_rng(cfg.seed + 104729))
    ds = stream.dataset
    try:
        for t, idx in enumerate(stream.order):
            x, y = ds.inputs[idx], ds.labels[idx]
            if _replay_active(stream, t) and len(buffer):
                extra = np.array(buffer.sample(cfg.er_replay_size))
                xb = np.concatenate([x, ds.inputs[extra]])
                yb = np.concatenate([y, ds.labels[extra]])
                n_replay = len(extra)
            else:
                xb, yb, n_replay = x, y, 0
            entry = {"step": t, "task": stream.task_of(t), "loss": run.learn(xb, yb, t),
                     "distill_loss": float("nan"), "divergence": float("nan"), "recalled": n_replay}
            for i in idx:
                buffer.add(int(i))
            run.end_of_step(t, entry)
    except ArithmeticError as exc:  # non-finite loss or logits
        run.record.status = "aborted"
        run.record.message = f"step {t}: {exc}"
    return run.finish()


def lwf_config(cfg: TrainConfig, batch_size: int) -> TrainConfig:
    """ARM configuration that replays the unoptimised real batch (distillation only)."""
    recall = dataclasses.replace(cfg.recall, steps=0, init_mode="identity", batch_size=batch_size)
    return dataclasses.replace(cfg, recall=recall)


def train_lwf(stream: TaskStream, cfg: TrainConfig, test: Dataset | None = None) -> RunRecord:
    return train_arm(stream, lwf_config(cfg, stream.batch_size), test)


def train(stream: TaskStream, cfg: TrainConfig, test: Dataset | None = None) -> RunRecord:
    if cfg.method == "arm":
        return train_arm(stream, cfg, test)
    if cfg.method == "lwf":
        return train_lwf(stream, cfg, test)
    if cfg.method == "er":
        return train_er(stream, cfg, test)
    return train_naive(stream, cfg, test)
