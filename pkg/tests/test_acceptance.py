"""End-to-end acceptance checks on MNIST-5k-5 and randomised property suites.

The MNIST runs are shared through one session-scoped cache (about 12 minutes
on a single core).  Each test records one verdict line that is printed in the
terminal summary.
"""
import dataclasses
import time

import numpy as np
import pytest

from arm_recall import tensor as T
from arm_recall.data import build_stationary_stream, build_task_stream, subsample_and_split
from arm_recall.metrics import AccuracyMatrix, average_accuracy, forgetting, gradient_correlation_study
from arm_recall.model import ModelParams, forward, init_mlp, sgd_update
from arm_recall.objectives import LossWeights, batch_entropy, cross_entropy, entropy, js_divergence, recall_objective
from arm_recall.recall import RecallConfig
from arm_recall.rundir import write_record
from arm_recall.trainer import TrainConfig, train

from conftest import record_criterion
from oracles import average_accuracy_ref, forgetting_ref

SEEDS = (0, 1, 2, 3, 4)
ABLATION_SEEDS = (0, 1, 2)


class MnistSuite:
    """Lazily computed, memoised runs keyed by (label, seed)."""

    def __init__(self, source, test):
        self.source, self.test = source, test
        self.cache = {}
        self.timing = {}

    def split(self, seed):
        key = ("split", seed)
        if key not in self.cache:
            self.cache[key] = subsample_and_split(self.source, self.test, seed=seed)
        return self.cache[key]

    def stream(self, seed, stationary=False):
        train_ds, _, _ = self.split(seed)
        build = build_stationary_stream if stationary else build_task_stream
        return build(train_ds, 5, 10, seed)

    def run(self, label, seed, cfg=None, stationary=False):
        key = (label, seed)
        if key not in self.cache:
            cfg = cfg or TrainConfig(method=label, seed=seed)
            t0 = time.perf_counter()
            self.cache[key] = (train(self.stream(seed, stationary), cfg, self.split(seed)[2]),
                               self.stream(seed, stationary))
            self.timing[key] = time.perf_counter() - t0
        return self.cache[key][0]

    def arm(self, seed):
        return self.run("arm", seed)

    def seconds(self, label):
        return sum(v for (lab, _), v in self.timing.items() if lab == label)


@pytest.fixture(scope="session")
def suite(mnist):
    return MnistSuite(*mnist)


def _ms(values):
    v = np.asarray(values, dtype=float)
    return v.mean(), (v.std(ddof=1) if v.size > 1 else 0.0)


# --------------------------------------------------------------------------- 1


def _with_leaf(params, k, leaf):
    tensors = [T.Tensor(a) for a in params.arrays()]
    tensors[k] = leaf
    return ModelParams(params.dims, tensors[0::2], tensors[1::2])


def test_criterion_01_autodiff_matches_finite_differences():
    t0 = time.perf_counter()
    worst = 0.0
    for cfg_id in range(100):
        rng = np.random.default_rng(cfg_id)
        side = int(rng.integers(2, 4))
        d_in = side * side
        hidden = int(rng.integers(3, 7))
        classes = int(rng.integers(2, 5))
        dims = (d_in, hidden, hidden, classes)
        # initialised parameters with random biases; inputs below are drawn from [-2, 2]
        base = init_mlp(dims, cfg_id)
        base = ModelParams.from_arrays(dims, [a if a.ndim == 2 else rng.uniform(-0.5, 0.5, size=a.shape)
                                              for a in base.arrays()])
        other = sgd_update(base, [rng.normal(size=a.shape) * 0.3 for a in base.arrays()], 1.0).frozen()
        n = int(rng.integers(2, 4))
        x = rng.uniform(-2, 2, size=(n, d_in))
        y = rng.integers(0, classes, size=n)
        weights = LossWeights(sharpen=0.0) if cfg_id % 2 else LossWeights()
        labels = [int(y[0])]
        x_recall = rng.uniform(0.05, 0.95, size=(n, d_in))

        def ce(p):
            return cross_entropy(forward(p, x), y)

        def js(p):
            return js_divergence(forward(p, x), forward(other, x))

        def rec(p):
            return recall_objective(T.Tensor(x_recall), labels, other, p, weights, spatial=(side, side))

        for k, arr in enumerate(base.arrays()):
            for fn in (ce, js, rec):
                worst = max(worst, T.finite_diff_check(lambda leaf: fn(_with_leaf(base, k, leaf)), arr))
        frozen = base.frozen()
        worst = max(worst, T.finite_diff_check(lambda v: cross_entropy(forward(frozen, v), y), x))
        worst = max(worst, T.finite_diff_check(lambda v: js_divergence(forward(frozen, v), forward(other, v)), x))
        worst = max(worst, T.finite_diff_check(
            lambda v: recall_objective(v, labels, other, frozen, weights, spatial=(side, side)), x_recall))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    record_criterion(1, ok, f"max rel. error {worst:.2e} over 100 MLPs (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert worst < 1e-4
    assert elapsed < 60


# --------------------------------------------------------------------------- 2


def test_criterion_02_objective_identities():
    rng = np.random.default_rng(2)
    worst_sym = worst_ce = 0.0
    bounds_ok = True
    for _ in range(1000):
        c = int(rng.integers(2, 12))
        p_logits = T.Tensor(rng.normal(size=(1, c)) * rng.uniform(0.1, 8))
        q_logits = T.Tensor(rng.normal(size=(1, c)) * rng.uniform(0.1, 8))
        js_pq = js_divergence(p_logits, q_logits).item()
        js_qp = js_divergence(q_logits, p_logits).item()
        worst_sym = max(worst_sym, abs(js_pq - js_qp))
        bounds_ok &= -1e-10 <= js_pq <= np.log(2) + 1e-10
        bounds_ok &= abs(js_divergence(p_logits, p_logits).item()) <= 1e-10
        m = int(rng.integers(1, 10))
        rows = T.Tensor(rng.dirichlet(np.ones(c) * rng.uniform(0.05, 3), size=m))
        h = batch_entropy(rows).item()
        bounds_ok &= -1e-10 <= h <= np.log(c) + 1e-10
        p = T.softmax(p_logits)
        worst_ce = max(worst_ce, abs(cross_entropy(p_logits, p.data).item() - entropy(p).item()))
    ok = bounds_ok and worst_sym <= 1e-10 and worst_ce <= 1e-10
    record_criterion(2, ok, f"JS asymmetry {worst_sym:.1e}, |CE(p,p)-H(p)| {worst_ce:.1e}, bounds held: {bounds_ok}")
    assert ok


# --------------------------------------------------------------------------- 3


def test_criterion_03_metric_oracle():
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(100):
        a = rng.uniform(0, 100, size=(5, 5))
        rows = a.tolist()
        m = AccuracyMatrix(5, a)
        mismatches += sum(average_accuracy(m, t) != average_accuracy_ref(rows, t) for t in range(1, 6))
        mismatches += sum(forgetting(m, t) != forgetting_ref(rows, t) for t in range(2, 6))
    record_criterion(3, mismatches == 0, f"{mismatches} mismatches against brute force on 100 matrices")
    assert mismatches == 0


# --------------------------------------------------------------------------- 4-7


def test_criterion_04_naive_sequential(suite):
    accs = [suite.run("naive", s).final["accuracy"] for s in SEEDS]
    mean, std = _ms(accs)
    secs = suite.seconds("naive")
    ok = abs(mean - 18.8) <= 5.0 and secs < 300
    record_criterion(4, ok, f"naive accuracy {mean:.1f} ± {std:.1f} (target 18.8 ± 5), {secs:.0f}s")
    assert abs(mean - 18.8) <= 5.0


def test_criterion_05_stationary(suite):
    rec = suite.run("naive_stationary", 0, TrainConfig(method="naive", stationary=True, seed=0), stationary=True)
    acc = rec.final["accuracy"]
    secs = suite.seconds("naive_stationary")
    record_criterion(5, acc >= 85 and secs < 120, f"stationary accuracy {acc:.1f} (>= 85), {secs:.0f}s")
    assert acc >= 85


def test_criterion_06_arm_default_settings(suite):
    recs = [suite.arm(s) for s in SEEDS]
    acc_m, acc_s = _ms([r.final["accuracy"] for r in recs])
    fgt_m, fgt_s = _ms([r.final["forgetting"] for r in recs])
    naive_m, _ = _ms([suite.run("naive", s).final["accuracy"] for s in SEEDS])
    secs = suite.seconds("arm")
    ok_acc = 48 <= acc_m <= 64
    ok_fgt = 14 <= fgt_m <= 30
    ok_gap = acc_m - naive_m >= 25
    record_criterion(6, ok_acc and ok_fgt and ok_gap and secs < 1200,
                     f"ARM accuracy {acc_m:.1f} ± {acc_s:.1f} (in [48,64]: {ok_acc}), forgetting {fgt_m:.1f} ± "
                     f"{fgt_s:.1f} (in [14,30]: {ok_fgt}), gap over naive {acc_m - naive_m:.1f} (>= 25: {ok_gap}), "
                     f"{secs:.0f}s")
    assert ok_acc
    assert ok_fgt
    assert ok_gap


def test_criterion_07_baseline_ordering(suite):
    acc = {}
    fgt = {}
    for label in ("er", "arm", "lwf", "naive"):
        recs = [suite.run(label, s) for s in SEEDS]
        acc[label] = _ms([r.final["accuracy"] for r in recs])[0]
        fgt[label] = _ms([r.final["forgetting"] for r in recs])[0]
    order = acc["er"] >= acc["arm"] >= acc["lwf"] >= acc["naive"]
    fgt_ok = fgt["arm"] < fgt["lwf"]
    detail = ", ".join(f"{k} {acc[k]:.1f}/{fgt[k]:.1f}" for k in acc)
    record_criterion(7, order and fgt_ok, f"accuracy/forgetting: {detail}; ER>=ARM>=LwF>=naive: {order}; "
                                          f"ARM forgetting < LwF: {fgt_ok}")
    assert order
    assert fgt_ok


# --------------------------------------------------------------------------- 8


def unseen_fractions(rec, stream):
    """Per task k >= 2 (1-based): fraction of recalled argmax targets in classes not yet seen at that step."""
    seen: set[int] = set()
    per_task = {}
    for t, (_, y) in enumerate(stream):
        seen |= set(int(v) for v in y)
        counts = rec.recall_counts.get(t)
        if counts is None:
            continue
        k = stream.task_of(t)
        unseen = sum(int(counts[c]) for c in range(len(counts)) if c not in seen)
        tot = per_task.setdefault(k, [0, 0])
        tot[0] += unseen
        tot[1] += int(counts.sum())
    return {k + 1: u / n for k, (u, n) in sorted(per_task.items()) if n}


def test_criterion_08_unseen_class_avoidance(suite):
    worst = 0.0
    per_seed = []
    for s in SEEDS:
        suite.arm(s)
        rec, stream = suite.cache[("arm", s)]
        fr = unseen_fractions(rec, stream)
        per_seed.append(fr)
        worst = max([worst] + list(fr.values()))
    tasks = sorted(per_seed[0]) if per_seed else []
    means = ", ".join(f"task {k}: {np.mean([fr.get(k, 0.0) for fr in per_seed]):.3f}" for k in tasks)
    record_criterion(8, worst < 0.10, f"max per-task unseen-class fraction {worst:.4f} (< 0.10) over "
                                      f"{len(SEEDS)} seeds; seed means {means}")
    assert per_seed and all(per_seed)
    assert worst < 0.10


# --------------------------------------------------------------------------- 9


def test_criterion_09_gradient_study_direction(suite):
    t0 = time.perf_counter()
    c1, c2 = [], []
    for s in SEEDS:
        rec = suite.arm(s)
        dump = rec.recall_dump
        study = gradient_correlation_study(rec.params, dump["x"], dump["originator"], dump["soft_target"],
                                           suite.split(s)[0], samples=200, target_mode="hard", seed=s)
        top = study.layers.index(f"FC {rec.params.num_layers}")
        c1.append(study.per_sample["class1"][:, top])
        c2.append(study.per_sample["class2"][:, top])
    c1, c2 = np.concatenate(c1), np.concatenate(c2)
    gap = c2.mean() - c1.mean()
    secs = time.perf_counter() - t0
    record_criterion(9, gap >= 0.2 and secs < 300,
                     f"top layer hard targets: originator {c1.mean():+.3f}, target {c2.mean():+.3f}, gap {gap:.3f} "
                     f"(>= 0.2) over {c1.size} samples, {secs:.0f}s")
    assert c1.size >= 200
    assert gap >= 0.2


# --------------------------------------------------------------------------- 10


def test_criterion_10_ablation_directions(suite):
    base = TrainConfig(method="arm")
    rows = []
    for s in ABLATION_SEEDS:
        real = suite.arm(s).final
        noise_cfg = dataclasses.replace(base, seed=s, recall=dataclasses.replace(base.recall, init_mode="random_noise"))
        noise = suite.run("arm_noise", s, noise_cfg).final
        twice = suite.run("arm_x2", s, dataclasses.replace(base, seed=s, recalls_per_step=2)).final
        rows.append((real["accuracy"], real["forgetting"], noise["accuracy"], twice["accuracy"], twice["forgetting"]))
    r = np.array(rows).mean(axis=0)
    noise_ok = r[2] < r[0]
    x2_acc_ok = r[3] < r[0]
    x2_fgt_ok = r[4] < r[1]
    record_criterion(10, noise_ok and x2_acc_ok and x2_fgt_ok,
                     f"seeds {list(ABLATION_SEEDS)}: real init {r[0]:.1f}, noise init {r[2]:.1f} (lower: {noise_ok}); "
                     f"2x recall accuracy {r[3]:.1f} (lower: {x2_acc_ok}), forgetting {r[4]:.1f} vs {r[1]:.1f} "
                     f"(lower: {x2_fgt_ok})")
    assert noise_ok
    assert x2_acc_ok
    assert x2_fgt_ok


# --------------------------------------------------------------------------- 11


def test_criterion_11_metrics_csv_bit_identical(suite, tmp_path):
    first = suite.arm(0)
    stream = suite.stream(0)
    again = train(stream, TrainConfig(method="arm", seed=0), suite.split(0)[2])
    write_record(tmp_path / "a", first, stream.describe(), (28, 28))
    write_record(tmp_path / "b", again, stream.describe(), (28, 28))
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("metrics.csv", "recall_density.csv", "accuracy_matrix.csv"))
    record_criterion(11, same, "repeated ARM seed-0 run: metrics.csv, recall_density.csv, accuracy_matrix.csv "
                               f"byte-identical: {same}")
    assert same
