"""Command-line front end: ``arm-recall {train,compare,gradstudy,plot}``.

Exit codes: 0 ok, 1 runtime failure, 2 configuration / usage error.  The
default output root comes from ``$ARM_OUTPUT_ROOT`` (else ``./runs``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import (
    ExperimentConfig,
    IdxSpec,
    _resolve,
    build_stream,
    load_config,
    load_data,
    output_root,
)
from .errors import ConfigurationError, FormatError
from .metrics import gradient_correlation_study, recall_density
from .model import load_checkpoint
from .rundir import (
    read_csv,
    read_summary,
    seed_dir,
    seed_dirs,
    write_csv,
    write_record,
    write_summary,
)
from .svg import bar_chart, heatmap, line_chart
from .trainer import train

logger = logging.getLogger("arm_recall")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


def _memory(cfg: ExperimentConfig) -> int:
    if cfg.method == "arm":
        return cfg.recall.batch_size
    if cfg.method == "lwf":
        return cfg.stream.batch_size
    if cfg.method == "er":
        return cfg.train.er_buffer_size
    return 0


def _echo(cfg: ExperimentConfig, base: Path) -> dict:
    body = cfg.model_dump(mode="json")
    if isinstance(cfg.dataset, IdxSpec):
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            body["dataset"][key] = str(_resolve(getattr(cfg.dataset, key), base).resolve())
    body.pop("output_dir", None)
    return {"library_version": __version__, "seeds": list(cfg.seeds), "config": body}


def _load_echo(run_dir: Path) -> ExperimentConfig:
    path = Path(run_dir) / "config.yaml"
    if not path.is_file():
        path = Path(run_dir).parent / "config.yaml"
    if not path.is_file():
        raise ConfigurationError(f"{run_dir}: no config.yaml found")
    echo = yaml.safe_load(path.read_text())
    try:
        return ExperimentConfig.model_validate(echo["config"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: not a run config echo", offset=0) from exc


def cmd_train(args) -> int:
    cfg, base = load_config(args.config)
    if args.seeds:
        cfg = cfg.model_copy(update={"seeds": [int(s) for s in args.seeds.split(",")]})
    run_dir = Path(args.output) if args.output else (
        _resolve(cfg.output_dir, base) if cfg.output_dir else output_root() / cfg.name)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(yaml.safe_dump(_echo(cfg, base), sort_keys=False))
    records = []
    failed = False
    for seed in cfg.seeds:
        train_ds, test_ds = load_data(cfg, base, seed)
        stream = build_stream(cfg, train_ds, seed)
        logger.info("seed %d: %s on %d batches", seed, cfg.method, len(stream))
        rec = train(stream, cfg.train_config(seed), test_ds)
        write_record(seed_dir(run_dir, seed), rec, stream.describe(), train_ds.spatial)
        records.append(rec)
        if rec.status != "ok":
            logger.error("seed %d: %s", seed, rec.message)
            failed = True
    line = write_summary(run_dir, cfg.method, _memory(cfg), records)
    print(line)
    print(f"run directory: {run_dir}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_compare(args) -> int:
    if len(args.run_dirs) < 2:
        raise UsageError("compare needs at least two run directories")
    rows = []
    for d in args.run_dirs:
        s = read_summary(Path(d))
        rows.append((Path(d).name, s["method"], s["M"], s["accuracy_mean"], s["accuracy_std"],
                     s["forgetting_mean"], s["forgetting_std"], s["seeds"]))
    header = ("run", "method", "M", "accuracy_mean", "accuracy_std", "forgetting_mean", "forgetting_std", "seeds")
    out = Path(args.out) if args.out else Path("comparison.csv")
    write_csv(out, "comparison", header, rows)
    for r in rows:
        print(f"{r[0]:<20} {r[1]:<6} M={r[2]:<4} accuracy {r[3]:.1f} ± {r[4]:.1f}  "
              f"forgetting {r[5]:.1f} ± {r[6]:.1f}")
    return EXIT_OK


def cmd_gradstudy(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _load_echo(run_dir)
    dirs = seed_dirs(run_dir)
    if not dirs:
        raise ConfigurationError(f"{run_dir}: no seed results")
    pooled = {}
    for mode in ("hard", "soft"):
        c1, c2, names = [], [], None
        for d in dirs:
            dump_path, ckpt = d / "recall_dump.npz", d / "checkpoint.npz"
            if not dump_path.is_file() or not ckpt.is_file():
                raise ConfigurationError(f"{d}: missing recall dump or checkpoint (was this an ARM run?)")
            seed = json.loads((d / "record.json").read_text())["seed"]
            params, _ = load_checkpoint(ckpt)
            with np.load(dump_path) as z:
                dump = {k: z[k] for k in z.files}
            train_ds, _ = load_data(cfg, Path("."), seed)
            rec = gradient_correlation_study(params, dump["x"], dump["originator"], dump["soft_target"],
                                             train_ds, samples=args.samples, target_mode=mode,
                                             seed=args.seed + seed)
            c1.append(rec.per_sample["class1"])
            c2.append(rec.per_sample["class2"])
            names = rec.layers
        a1, a2 = np.concatenate(c1), np.concatenate(c2)
        pooled[mode] = (names, a1, a2)
    rows = []
    for mode, (names, a1, a2) in pooled.items():
        for i, name in enumerate(names):
            rows.append((name, a1[:, i].mean(), a1[:, i].std(), a2[:, i].mean(), a2[:, i].std(), mode,
                         a1.shape[0]))
        bar_chart(names, {"originator class": list(a1.mean(axis=0)), "target class": list(a2.mean(axis=0))},
                  run_dir / f"gradcorr_{mode}.svg", errors={"originator class": list(a1.std(axis=0)),
                                                             "target class": list(a2.std(axis=0))},
                  title=f"Gradient correlation ({mode} targets)", ylabel="normalised dot product")
    write_csv(run_dir / "gradcorr.csv", "gradcorr",
              ("layer", "class1_mean", "class1_std", "class2_mean", "class2_std", "mode", "samples"), rows)
    for r in rows:
        print(f"{r[5]:<5} {r[0]:<5} class1 {r[1]:+.3f} ± {r[2]:.3f}  class2 {r[3]:+.3f} ± {r[4]:.3f}")
    return EXIT_OK


def _read_accuracy_series(d: Path) -> tuple[list[float], dict[str, list[float]]]:
    header, rows = read_csv(d / "curve.csv", "curve")
    if not rows:
        # fall back to one point per task end
        header, rows = read_csv(d / "accuracy_matrix.csv", "accuracy_matrix")
        meta = json.loads((d / "record.json").read_text())
        bounds = meta["stream"]["boundaries"][1:] + [meta["total_steps"]]
        xs = [float(b) for b in bounds[:len(rows)]]
    else:
        xs = [float(r[0]) for r in rows]
    series = {name: [float(r[i + 1]) for r in rows] for i, name in enumerate(header[1:])}
    return xs, series


def cmd_plot(args) -> int:
    dirs = seed_dirs(Path(args.run_dir))
    if not dirs:
        raise ConfigurationError(f"{args.run_dir}: no seed results")
    for d in dirs:
        for name in ("recall_density.csv", "accuracy_matrix.csv", "curve.csv", "record.json"):
            if not (d / name).is_file():
                raise ConfigurationError(f"{d}: missing {name}")
        meta = json.loads((d / "record.json").read_text())
        _, rows = read_csv(d / "recall_density.csv", "recall_density")
        triples = [(int(s), int(c), int(n)) for s, c, n in rows]
        dens = recall_density(triples, meta["num_classes"], meta["total_steps"], args.bins)
        write_csv(d / "density.csv", "density", ["bin"] + [f"class_{c}" for c in range(dens.shape[1])],
                  ([i] + list(r) for i, r in enumerate(dens)))
        heatmap(dens, d / "recall_density.svg", title=f"Recalled classes (seed {meta['seed']})")
        xs, series = _read_accuracy_series(d)
        line_chart(xs, series, d / "accuracy.svg", title=f"Per-task test accuracy (seed {meta['seed']})")
        print(f"wrote {d / 'recall_density.svg'} and {d / 'accuracy.svg'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arm-recall", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one experiment config over its seeds")
    t.add_argument("config")
    t.add_argument("--output", help="run directory (default: output_dir from config, else $ARM_OUTPUT_ROOT/<name>)")
    t.add_argument("--seeds", help="comma-separated seeds overriding the config")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="tabulate accuracy / forgetting of several runs")
    c.add_argument("run_dirs", nargs="*")
    c.add_argument("--out", help="CSV path (default ./comparison.csv)")
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("gradstudy", help="gradient-correlation study on a finished ARM run")
    g.add_argument("run_dir")
    g.add_argument("--samples", type=int, default=200, help="recalled samples per seed")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradstudy)

    pl = sub.add_parser("plot", help="SVG plots of recall density and accuracy")
    pl.add_argument("run_dir")
    pl.add_argument("--bins", type=int, default=25)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
