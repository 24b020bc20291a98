"""Two-hidden-layer ReLU MLP, frozen snapshots and snapshot-lag policies."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError, FormatError
from .tensor import Tensor

CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    """Live classifier parameters.  Tensors are replaced, never edited, on update."""

    dims: tuple[int, ...]
    weights: list[Tensor]
    biases: list[Tensor]
    seed: int | None = None

    @property
    def tensors(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def num_params(self) -> int:
        return sum(t.size for t in self.tensors)

    def arrays(self) -> list[np.ndarray]:
        return [t.data for t in self.tensors]

    def frozen(self) -> "ModelParams":
        """Same values as constants: differentiable w.r.t. inputs only."""
        return ModelParams(self.dims, [Tensor(w.data) for w in self.weights],
                           [Tensor(b.data) for b in self.biases], self.seed)

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.zero_grad()

    def grads(self) -> list[np.ndarray]:
        return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in self.tensors]

    @classmethod
    def from_arrays(cls, dims, arrays: Sequence[np.ndarray], seed=None, requires_grad=True) -> "ModelParams":
        arrays = list(arrays)
        if len(arrays) != 2 * (len(dims) - 1):
            raise ContractError(f"{len(arrays)} arrays for {len(dims) - 1} layers")
        ws = [Tensor(a, requires_grad=requires_grad) for a in arrays[0::2]]
        bs = [Tensor(a, requires_grad=requires_grad) for a in arrays[1::2]]
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise DimensionError(f"layer {i}: got {w.shape}/{b.shape} for dims {dims[i]}->{dims[i + 1]}")
        return cls(tuple(int(d) for d in dims), ws, bs, seed)


@dataclass(frozen=True)
class ModelSnapshot:
    params: ModelParams
    step: int

    @property
    def dims(self):
        return self.params.dims

    @property
    def weights(self):
        return self.params.weights

    @property
    def biases(self):
        return self.params.biases


def init_mlp(dims: Sequence[int], seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or min(dims) < 1:
        raise ContractError(f"expected (D_in, hidden, hidden, classes) with all >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True))
        bs.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return ModelParams(dims, ws, bs, seed)


def forward(params: ModelParams | ModelSnapshot, x) -> Tensor:
    """Logits of shape n x C for inputs n x D_in."""
    x = T.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != params.dims[0]:
        raise DimensionError(f"input shape {x.shape} does not fit model input width {params.dims[0]}")
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = T.relu(h)
    return h


def predict_logits(params: ModelParams | ModelSnapshot, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Graph-free forward pass for evaluation."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dims[0]:
        raise DimensionError(f"input shape {x.shape} does not fit model input width {params.dims[0]}")
    outs = []
    last = len(params.weights) - 1
    for start in range(0, x.shape[0], chunk):
        h = x[start:start + chunk]
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            h = h @ w.data + b.data
            if i < last:
                h = np.where(h > 0, h, 0.0)
        outs.append(h)
    if not outs:
        return np.zeros((0, params.dims[-1]))
    return np.concatenate(outs, axis=0)


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def sgd_update(params: ModelParams, grads: Iterable[np.ndarray], lr: float) -> ModelParams:
    """Plain SGD step; returns parameters built from fresh tensors."""
    new = [t.data - lr * g for t, g in zip(params.tensors, grads)]
    return ModelParams.from_arrays(params.dims, new, params.seed)


def take_snapshot(params: ModelParams, step: int) -> ModelSnapshot:
    return ModelSnapshot(params.frozen(), int(step))


@dataclass(frozen=True)
class LagPolicy:
    """When the lagged snapshot is refreshed from the live parameters.

    ``unit``: after every step.  ``periodic``: after step t when (t+1) % period == 0.
    ``boundary``: before the step whose batch contains a class never seen before.
    """

    kind: str = "boundary"
    period: int | None = None

    def __post_init__(self):
        if self.kind not in ("unit", "periodic", "boundary"):
            raise ConfigurationError(f"unknown lag policy {self.kind!r}")
        if self.kind == "periodic" and (self.period is None or self.period < 1):
            raise ConfigurationError("periodic lag needs period >= 1")

    def fires_before(self, t: int, labels, seen: set[int]) -> bool:
        if self.kind != "boundary":
            return False
        return bool(set(int(y) for y in np.unique(labels)) - seen) and t > 0

    def fires_after(self, t: int) -> bool:
        if self.kind == "unit":
            return True
        if self.kind == "periodic":
            return (t + 1) % self.period == 0
        return False


def maybe_update_snapshot(
    snapshot: ModelSnapshot,
    params: ModelParams,
    t: int,
    policy: LagPolicy,
    *,
    phase: str = "after",
    labels=None,
    seen: set[int] | None = None,
) -> ModelSnapshot:
    """Return a fresh snapshot if ``policy`` fires at step ``t`` in ``phase``.

    ``phase="before"`` is checked ahead of the learning step with the batch
    labels and the set of classes seen so far; ``phase="after"`` at the end of
    the step.
    """
    if t < 0:
        raise ContractError("step index must be >= 0")
    if phase == "before":
        fire = policy.fires_before(t, labels if labels is not None else [], seen or set())
    elif phase == "after":
        fire = policy.fires_after(t)
    else:
        raise ValueError(f"phase must be 'before' or 'after', got {phase!r}")
    return take_snapshot(params, t) if fire else snapshot


# ---------------------------------------------------------------------------
# checkpoints: a .npz with a JSON header


def save_checkpoint(path: str | Path, params: ModelParams, extra: dict | None = None) -> None:
    header = {"version": CHECKPOINT_VERSION, "dims": list(params.dims), "seed": params.seed,
              "extra": extra or {}}
    arrays = {f"p{i}": a for i, a in enumerate(params.arrays())}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    try:
        with np.load(path) as z:
            header = json.loads(bytes(z["header"]).decode())
            n = 2 * (len(header["dims"]) - 1)
            arrays = [z[f"p{i}"] for i in range(n)]
    except (KeyError, ValueError, OSError) as exc:
        raise FormatError(f"unreadable checkpoint {path}: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint version {header.get('version')} is not {CHECKPOINT_VERSION}")
    params = ModelParams.from_arrays(header["dims"], arrays, header.get("seed"))
    return params, header.get("extra", {})
