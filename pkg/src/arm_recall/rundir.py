"""Reading and writing run directories.

Layout::

    <run>/config.yaml            validated config echo + library version + seeds
    <run>/metrics_summary.csv    one row per seed plus mean and std
    <run>/summary.txt            "accuracy mean ± std" line
    <run>/seed_<k>/metrics.csv, recall_density.csv, accuracy_matrix.csv,
                  curve.csv, checkpoint.npz, recall_dump.npz,
                  recall_targets.csv, recall_grid.pgm, record.json

Every CSV starts with a ``# arm_recall <kind> v<N>`` comment line.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError
from .model import save_checkpoint
from .trainer import RunRecord

CSV_VERSION = 1
METRICS_COLUMNS = ("step", "task", "loss", "distill_loss", "divergence", "recalled")
SUMMARY_COLUMNS = ("seed", "method", "M", "accuracy", "forgetting", "status")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, kind: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    buf.write(f"# arm_recall {kind} v{CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path: Path, kind: str) -> tuple[list[str], list[list[str]]]:
    text = Path(path).read_text().splitlines()
    expected = f"# arm_recall {kind} v{CSV_VERSION}"
    if not text or text[0].strip() != expected:
        raise FormatError(f"{path}: expected header comment {expected!r}", offset=0)
    rows = list(csv.reader(text[1:]))
    if not rows:
        raise FormatError(f"{path}: no column header", offset=len(text[0]) + 1)
    return rows[0], rows[1:]


def seed_dir(run_dir: Path, seed: int) -> Path:
    return Path(run_dir) / f"seed_{seed}"


def seed_dirs(run_dir: Path) -> list[Path]:
    run_dir = Path(run_dir)
    if (run_dir / "record.json").is_file():
        return [run_dir]
    dirs = sorted(run_dir.glob("seed_*"), key=lambda p: int(p.name.split("_")[1]))
    return [d for d in dirs if (d / "record.json").is_file()]


def write_pgm_grid(path: Path, images: np.ndarray, spatial: tuple[int, int], cols: int = 10) -> None:
    """Tile images (n x H*W in [0,1]) into one binary greyscale PGM."""
    h, w = spatial
    n = images.shape[0]
    rows = max(1, math.ceil(n / cols))
    grid = np.zeros((rows * (h + 1), cols * (w + 1)), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        tile = np.clip(np.round(images[i].reshape(h, w) * 255), 0, 255).astype(np.uint8)
        grid[r * (h + 1):r * (h + 1) + h, c * (w + 1):c * (w + 1) + w] = tile
    header = f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + grid.tobytes())


def write_record(out: Path, rec: RunRecord, stream_desc: dict, spatial) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", "metrics", METRICS_COLUMNS,
              ([e[c] for c in METRICS_COLUMNS] for e in rec.step_log))
    write_csv(out / "recall_density.csv", "recall_density", ("step", "class", "count"),
              ((s, c, int(n)) for s, counts in sorted(rec.recall_counts.items())
               for c, n in enumerate(counts) if n))
    n_tasks = rec.num_tasks
    acc = rec.accuracy.a if rec.accuracy is not None else np.full((n_tasks, n_tasks), np.nan)
    write_csv(out / "accuracy_matrix.csv", "accuracy_matrix",
              ["after_task"] + [f"task_{j + 1}" for j in range(n_tasks)],
              ([i + 1] + list(acc[i]) for i in range(n_tasks)))
    write_csv(out / "curve.csv", "curve", ["step"] + [f"task_{j + 1}" for j in range(n_tasks)],
              ([s] + list(v) for s, v in rec.curve))
    if rec.params is not None:
        save_checkpoint(out / "checkpoint.npz", rec.params, {"seed": rec.seed, "status": rec.status})
    if rec.recall_dump is not None:
        d = rec.recall_dump
        np.savez(out / "recall_dump.npz", **d)
        c = d["soft_target"].shape[1]
        write_csv(out / "recall_targets.csv", "recall_targets",
                  ["step", "originator", "target"] + [f"p{k}" for k in range(c)],
                  ([int(s), int(o), int(np.argmax(p))] + list(p)
                   for s, o, p in zip(d["step"], d["originator"], d["soft_target"])))
        if spatial is not None:
            write_pgm_grid(out / "recall_grid.pgm", d["x"][-100:], spatial)
    meta = {"seed": rec.seed, "status": rec.status, "message": rec.message,
            "final": rec.final, "num_classes": rec.num_classes, "num_tasks": rec.num_tasks,
            "total_steps": rec.total_steps, "stream": stream_desc}
    (out / "record.json").write_text(json.dumps(meta, indent=2, sort_keys=True, allow_nan=True) + "\n")


def summarise(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value); NaNs ignored."""
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def write_summary(run_dir: Path, method: str, memory: int, records: Sequence[RunRecord]) -> str:
    rows = [(r.seed, method, memory, r.final.get("accuracy", float("nan")),
             r.final.get("forgetting", float("nan")), r.status) for r in records]
    a_mean, a_std = summarise([r[3] for r in rows])
    f_mean, f_std = summarise([r[4] for r in rows])
    rows += [("mean", method, memory, a_mean, f_mean, ""),
             ("std", method, memory, a_std, f_std, "")]
    write_csv(Path(run_dir) / "metrics_summary.csv", "metrics_summary", SUMMARY_COLUMNS, rows)
    line = (f"{method}: accuracy {a_mean:.1f} ± {a_std:.1f}, forgetting {f_mean:.1f} ± {f_std:.1f} "
            f"over {len(records)} seed(s)")
    (Path(run_dir) / "summary.txt").write_text(line + "\n")
    return line


def read_summary(run_dir: Path) -> dict:
    header, rows = read_csv(Path(run_dir) / "metrics_summary.csv", "metrics_summary")
    if tuple(header) != SUMMARY_COLUMNS:
        raise FormatError(f"{run_dir}: metrics_summary.csv columns {header} do not match schema", offset=0)
    by_seed = {r[0]: r for r in rows}
    if "mean" not in by_seed or "std" not in by_seed:
        raise FormatError(f"{run_dir}: metrics_summary.csv lacks mean/std rows", offset=0)
    mean, std = by_seed["mean"], by_seed["std"]
    return {"method": mean[1], "M": int(mean[2]),
            "accuracy_mean": float(mean[3]), "accuracy_std": float(std[3]),
            "forgetting_mean": float(mean[4]), "forgetting_std": float(std[4]),
            "seeds": len(rows) - 2}
