"""Datasets, IDX ingestion and class-incremental task streams."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigurationError, ContractError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # n x D, float64 in [0, 1]
    labels: np.ndarray  # n, int64
    class_count: int
    spatial: tuple[int, int] | None = None

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ContractError(f"inputs {self.inputs.shape} and labels {self.labels.shape} disagree")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ContractError("labels outside [0, class_count)")
        if self.inputs.size and (self.inputs.min() < 0 or self.inputs.max() > 1):
            raise ContractError("inputs outside [0, 1]")
        self.inputs.flags.writeable = False
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx].copy(), self.labels[idx].copy(), self.class_count, self.spatial)

    def of_classes(self, classes) -> "Dataset":
        return self.subset(np.flatnonzero(np.isin(self.labels, list(classes))))


# ---------------------------------------------------------------------------
# IDX


def _read_header(buf: bytes, path, magic: int, ndims: int):
    need = 4 * (1 + ndims)
    if len(buf) < need:
        raise FormatError(f"{path}: truncated header", offset=len(buf))
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    return struct.unpack(">" + "I" * ndims, buf[4:need]), need


def load_idx(images_path: str | Path, labels_path: str | Path, class_count: int = 10) -> Dataset:
    """Read an IDX image file (``0x803``, n x H x W uint8) and label file (``0x801``)."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    img_buf = images_path.read_bytes()
    lab_buf = labels_path.read_bytes()
    (n, h, w), off = _read_header(img_buf, images_path, IDX_IMAGES_MAGIC, 3)
    (n_lab,), lab_off = _read_header(lab_buf, labels_path, IDX_LABELS_MAGIC, 1)
    if n != n_lab:
        raise FormatError(f"{images_path} holds {n} images but {labels_path} holds {n_lab} labels", offset=4)
    if len(img_buf) - off != n * h * w:
        raise FormatError(f"{images_path}: expected {n * h * w} pixel bytes, found {len(img_buf) - off}",
                          offset=len(img_buf))
    if len(lab_buf) - lab_off != n:
        raise FormatError(f"{labels_path}: expected {n} label bytes, found {len(lab_buf) - lab_off}",
                          offset=len(lab_buf))
    pixels = np.frombuffer(img_buf, dtype=np.uint8, offset=off).reshape(n, h * w)
    labels = np.frombuffer(lab_buf, dtype=np.uint8, offset=lab_off).astype(np.int64)
    if labels.size and labels.max() >= class_count:
        bad = int(np.argmax(labels >= class_count))
        raise FormatError(f"{labels_path}: label {labels[bad]} >= class_count {class_count}",
                          offset=lab_off + bad)
    return Dataset(pixels.astype(np.float64) / 255.0, labels, class_count, (h, w))


def write_idx(images_path: str | Path, labels_path: str | Path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (n x H x W) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


# ---------------------------------------------------------------------------
# splits and synthetic data


def subsample_and_split(source: Dataset, test: Dataset, n_train: int = 5000, n_val: int = 3000,
                        seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Class-balanced draw (without replacement) of disjoint train and val subsets.

    The test set is passed through untouched.
    """
    c = source.class_count
    if n_train % c or n_val % c:
        raise ConfigurationError(f"n_train={n_train} and n_val={n_val} must be divisible by {c} classes")
    per_train, per_val = n_train // c, n_val // c
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for k in range(c):
        pool = np.flatnonzero(source.labels == k)
        if pool.size < per_train + per_val:
            raise ConfigurationError(f"class {k} has {pool.size} samples, need {per_train + per_val}")
        pick = rng.choice(pool, size=per_train + per_val, replace=False)
        train_idx.append(pick[:per_train])
        val_idx.append(pick[per_train:])
    train_idx = np.sort(np.concatenate(train_idx))
    val_idx = np.sort(np.concatenate(val_idx))
    return source.subset(train_idx), source.subset(val_idx), test


def make_blobs(classes: int, dims: int, per_class: int, separation: float, seed: int,
               spread: float = 0.08) -> Dataset:
    """Isotropic Gaussian clusters clipped to [0, 1].

    Class k is centred at ``0.5 - separation/2`` plus ``separation`` on
    coordinate k, i.e. the vertices of a scaled simplex.  When ``dims`` is a
    perfect square the inputs get a square spatial layout.
    """
    if per_class < 1:
        raise ConfigurationError("make_blobs needs per_class >= 1")
    if not separation > 0:
        raise ConfigurationError("separation must be > 0")
    if dims < classes:
        raise ConfigurationError(f"dims ({dims}) must be >= classes ({classes})")
    rng = np.random.default_rng(seed)
    means = np.full((classes, dims), 0.5 - separation / 2)
    means[np.arange(classes), np.arange(classes)] += separation
    labels = np.repeat(np.arange(classes), per_class)
    x = means[labels] + spread * rng.standard_normal((labels.size, dims))
    perm = rng.permutation(labels.size)
    side = int(round(np.sqrt(dims)))
    spatial = (side, side) if side * side == dims else None
    return Dataset(np.clip(x[perm], 0.0, 1.0), labels[perm].astype(np.int64), classes, spatial)


# ---------------------------------------------------------------------------
# streams


@dataclass
class TaskStream:
    """Ordered single-pass batches with the class sets of each task.

    ``boundaries[k]`` is the index of the first batch of task k.
    """

    dataset: Dataset
    order: list[np.ndarray]  # per batch: row indices into ``dataset``
    boundaries: list[int]
    tasks: list[tuple[int, ...]]
    batch_size: int
    seed: int
    stationary: bool = False

    def __len__(self) -> int:
        return len(self.order)

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for idx in self.order:
            yield self.dataset.inputs[idx], self.dataset.labels[idx]

    def batch(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        idx = self.order[t]
        return self.dataset.inputs[idx], self.dataset.labels[idx]

    def task_of(self, t: int) -> int:
        return int(np.searchsorted(self.boundaries, t, side="right") - 1)

    def is_task_end(self, t: int) -> bool:
        return t + 1 == len(self.order) or (t + 1) in self.boundaries

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for idx in self.order:
            h.update(np.asarray(idx, dtype=np.int64).tobytes())
        return h.hexdigest()

    def describe(self) -> dict:
        return {"num_tasks": len(self.tasks), "batch_size": self.batch_size, "seed": self.seed,
                "stationary": self.stationary, "tasks": [list(t) for t in self.tasks],
                "boundaries": list(self.boundaries), "num_batches": len(self.order),
                "fingerprint": self.fingerprint()}

    @classmethod
    def from_description(cls, dataset: Dataset, desc: dict) -> "TaskStream":
        build = build_stationary_stream if desc.get("stationary") else build_task_stream
        stream = build(dataset, desc["num_tasks"], desc["batch_size"], desc["seed"])
        if stream.fingerprint() != desc["fingerprint"]:
            raise ContractError("rebuilt stream does not match the recorded batch order")
        return stream


def _task_classes(class_count: int, num_tasks: int) -> list[tuple[int, ...]]:
    if num_tasks < 1 or class_count % num_tasks:
        raise ConfigurationError(f"{class_count} classes cannot be split into {num_tasks} equal tasks")
    per = class_count // num_tasks
    return [tuple(range(k * per, (k + 1) * per)) for k in range(num_tasks)]


def build_task_stream(train: Dataset, num_tasks: int, batch_size: int, seed: int) -> TaskStream:
    """Tasks take classes in ascending id order; samples shuffled within a task;
    the trailing partial batch of each task is dropped."""
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    tasks = _task_classes(train.class_count, num_tasks)
    rng = np.random.default_rng(seed)
    order, boundaries = [], []
    for classes in tasks:
        pool = rng.permutation(np.flatnonzero(np.isin(train.labels, classes)))
        n_batches = pool.size // batch_size
        if n_batches == 0:
            raise ConfigurationError(f"task {classes} has fewer than {batch_size} samples")
        boundaries.append(len(order))
        order += [pool[i * batch_size:(i + 1) * batch_size] for i in range(n_batches)]
    return TaskStream(train, order, boundaries, tasks, batch_size, seed)


def build_stationary_stream(train: Dataset, num_tasks: int, batch_size: int, seed: int) -> TaskStream:
    """i.i.d. shuffle of the whole training set.  ``boundaries`` split it into
    ``num_tasks`` equal evaluation windows; ``tasks`` keeps the class partition
    used for per-task test accuracy."""
    tasks = _task_classes(train.class_count, num_tasks)
    rng = np.random.default_rng(seed)
    pool = rng.permutation(len(train))
    n_batches = pool.size // batch_size
    order = [pool[i * batch_size:(i + 1) * batch_size] for i in range(n_batches)]
    per = n_batches // num_tasks
    boundaries = [k * per for k in range(num_tasks)]
    return TaskStream(train, order, boundaries, tasks, batch_size, seed, stationary=True)
