"""Experiment configuration files (YAML) and their conversion to runtime objects."""
from __future__ import annotations

import os
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .data import Dataset, build_stationary_stream, build_task_stream, load_idx, make_blobs, subsample_and_split
from .errors import ConfigurationError
from .model import LagPolicy
from .objectives import LossWeights
from .recall import RecallConfig
from .trainer import TrainConfig

OUTPUT_ROOT_ENV = "ARM_OUTPUT_ROOT"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class IdxSpec(_Strict):
    kind: Literal["idx"] = "idx"
    train_images: Path
    train_labels: Path
    test_images: Path
    test_labels: Path
    class_count: int = Field(10, ge=2)
    n_train: int = Field(5000, ge=1)
    n_val: int = Field(3000, ge=0)

    def check_files(self, base: Path) -> None:
        for name in ("train_images", "train_labels", "test_images", "test_labels"):
            p = _resolve(getattr(self, name), base)
            if not p.is_file():
                raise ConfigurationError(f"dataset.{name}: file not found: {p}")


class BlobSpec(_Strict):
    kind: Literal["blobs"] = "blobs"
    classes: int = Field(10, ge=2)
    dims: int = Field(64, ge=2)
    per_class: int = Field(100, ge=1)
    test_per_class: int = Field(50, ge=1)
    separation: float = Field(0.6, gt=0)
    spread: float = Field(0.08, gt=0)


class StreamSpec(_Strict):
    num_tasks: int = Field(5, ge=1)
    batch_size: int = Field(10, ge=1)
    stationary: bool = False


class RecallSpec(_Strict):
    batch_size: int = Field(10, ge=1)
    steps: int = Field(10, ge=1)
    rate: float = Field(25.0, gt=0)
    init_mode: Literal["from_real_batch", "random_noise"] = "from_real_batch"
    clamp_range: tuple[float, float] = (0.0, 1.0)
    divergence_mode: Literal["js", "cross_entropy"] = "js"
    prior_reduction: Literal["element_mean", "sample_sum"] = "element_mean"


class WeightSpec(_Strict):
    distill_recalled: float = Field(1.0, ge=0)
    distill_real: float = Field(1.0, ge=0)
    avoid_old: float = Field(1.0, ge=0)
    avoid_new: float = Field(0.1, ge=0)
    diversity: float = Field(16.0, ge=0)
    sharpen: float = Field(0.1, ge=0)
    l2: float = Field(1.0, ge=0)
    tv: float = Field(1.0, ge=0)
    divergence: float = Field(1.0, ge=0)


class LagSpec(_Strict):
    kind: Literal["boundary", "unit", "periodic"] = "boundary"
    period: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _period_for_periodic(self):
        if self.kind == "periodic" and self.period is None:
            raise ValueError("periodic lag needs a period")
        return self


class TrainSpec(_Strict):
    lr: float = Field(0.05, gt=0)
    hidden: int = Field(400, ge=1)
    recalls_per_step: int = Field(1, ge=0)
    er_buffer_size: int = Field(50, ge=1)
    er_replay_size: int = Field(10, ge=1)
    eval_every: int = Field(0, ge=0)
    dump_capacity: int = Field(1000, ge=0)


class ExperimentConfig(_Strict):
    name: str = "run"
    method: Literal["arm", "naive", "er", "lwf"] = "arm"
    dataset: IdxSpec | BlobSpec = Field(discriminator="kind")
    stream: StreamSpec = StreamSpec()
    train: TrainSpec = TrainSpec()
    recall: RecallSpec = RecallSpec()
    weights: WeightSpec = WeightSpec()
    lag: LagSpec = LagSpec()
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    output_dir: Optional[Path] = None

    def train_config(self, seed: int) -> TrainConfig:
        rc = RecallConfig(weights=LossWeights(**self.weights.model_dump()), **self.recall.model_dump())
        return TrainConfig(method=self.method, recall=rc, lag=LagPolicy(**self.lag.model_dump()),
                           stationary=self.stream.stationary, seed=seed, **self.train.model_dump())


def _resolve(p: Path, base: Path) -> Path:
    p = Path(os.path.expanduser(str(p)))
    return p if p.is_absolute() else base / p


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "\n".join(lines)


def load_config(path: str | Path) -> tuple[ExperimentConfig, Path]:
    """Parse and validate a config file; return it with the directory relative paths resolve from.

    Raises ConfigurationError with one ``field.path: message`` line per problem.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigurationError(format_validation_error(exc)) from exc
    base = path.resolve().parent
    if isinstance(cfg.dataset, IdxSpec):
        cfg.dataset.check_files(base)
    if cfg.weights.tv and isinstance(cfg.dataset, BlobSpec):
        side = int(round(cfg.dataset.dims ** 0.5))
        if side * side != cfg.dataset.dims:
            raise ConfigurationError("weights.tv: blob inputs have no square layout; set weights.tv to 0")
    return cfg, base


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def load_data(cfg: ExperimentConfig, base: Path, seed: int) -> tuple[Dataset, Dataset]:
    """(train, test) for one seed.  The training subset draw depends on the seed."""
    ds = cfg.dataset
    if isinstance(ds, IdxSpec):
        source = load_idx(_resolve(ds.train_images, base), _resolve(ds.train_labels, base), ds.class_count)
        test = load_idx(_resolve(ds.test_images, base), _resolve(ds.test_labels, base), ds.class_count)
        train, _val, test = subsample_and_split(source, test, ds.n_train, ds.n_val, seed)
        return train, test
    train = make_blobs(ds.classes, ds.dims, ds.per_class, ds.separation, seed, ds.spread)
    test = make_blobs(ds.classes, ds.dims, ds.test_per_class, ds.separation, seed + 1_000_003, ds.spread)
    return train, test


def build_stream(cfg: ExperimentConfig, train: Dataset, seed: int):
    build = build_stationary_stream if cfg.stream.stationary else build_task_stream
    return build(train, cfg.stream.num_tasks, cfg.stream.batch_size, seed)
