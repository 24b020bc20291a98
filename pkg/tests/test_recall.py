import dataclasses

import numpy as np
import pytest

from arm_recall.errors import ConfigurationError, ContractError
from arm_recall.model import init_mlp, sgd_update, take_snapshot
from arm_recall.objectives import LossWeights, recall_objective
from arm_recall import tensor as T
from arm_recall.recall import RecallConfig, generate_recall, init_recall_batch, recall_step

ZERO = LossWeights(**{f.name: 0.0 for f in dataclasses.fields(LossWeights)})


def _models(seed=0, dims=(16, 12, 12, 4), shift=0.5):
    p = init_mlp(dims, seed)
    rng = np.random.default_rng(seed + 100)
    new = sgd_update(p, [rng.normal(size=a.shape) for a in p.arrays()], shift)
    return take_snapshot(p, 0), new


def test_init_single_row_copies(rng):
    x, idx = init_recall_batch(np.array([[0.2, 0.4]]), RecallConfig(batch_size=3), rng)
    assert np.array_equal(x, np.tile([[0.2, 0.4]], (3, 1))) and list(idx) == [0, 0, 0]


def test_init_reproducible_and_noise_in_range():
    real = np.random.default_rng(0).uniform(size=(10, 5))
    a = init_recall_batch(real, RecallConfig(), np.random.default_rng(3))[1]
    b = init_recall_batch(real, RecallConfig(), np.random.default_rng(3))[1]
    assert np.array_equal(a, b)
    x, idx = init_recall_batch(real, RecallConfig(init_mode="random_noise", batch_size=50), np.random.default_rng(0))
    assert x.min() >= 0 and x.max() <= 1 and np.all(idx == -1)
    with pytest.raises(ContractError):
        init_recall_batch(np.zeros((0, 5)), RecallConfig(), np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        RecallConfig(rate=0.0)
    with pytest.raises(ConfigurationError):
        RecallConfig(init_mode="bogus")
    with pytest.raises(ConfigurationError):
        RecallConfig(prior_reduction="median")


def test_step_is_identity_when_models_agree_and_weights_zero(rng):
    old, _ = _models()
    x = rng.uniform(size=(4, 16))
    step = recall_step(x, [0], old, old.params, RecallConfig(weights=ZERO))
    assert np.array_equal(step.x, x) and step.ok


def test_step_output_clamped(rng):
    old, new = _models()
    cfg = RecallConfig(rate=1e3, spatial=(4, 4))
    step = recall_step(rng.uniform(size=(5, 16)), [0, 1], old, new, cfg)
    assert step.x.min() >= 0 and step.x.max() <= 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_step_non_finite_is_skipped(rng, caplog):
    old, new = _models()
    bad = new.frozen()
    bad.weights[0] = T.Tensor(np.full(bad.weights[0].shape, np.inf))
    x = rng.uniform(size=(2, 16))
    step = recall_step(x, [0], old, bad, RecallConfig(spatial=(4, 4)))
    assert not step.ok and np.array_equal(step.x, x)
    assert "recall step aborted" in caplog.text


def test_generate_runs_exactly_s_steps_and_soft_targets_normalised(rng):
    old, new = _models()
    cfg = RecallConfig(steps=7, rate=0.5, spatial=(4, 4))
    real = rng.uniform(size=(10, 16))
    b = generate_recall(real, np.zeros(10, dtype=int), old, new, cfg, np.random.default_rng(0))
    assert b.steps_run == 7 and len(b.objectives) == 7
    assert np.all(np.abs(b.soft_targets.sum(axis=1) - 1) < 1e-12)
    assert b.x.min() >= 0 and b.x.max() <= 1


def test_generate_deterministic(rng):
    old, new = _models()
    cfg = RecallConfig(steps=3, rate=0.5, spatial=(4, 4))
    real = rng.uniform(size=(10, 16))
    y = np.arange(10) % 2
    a = generate_recall(real, y, old, new, cfg, np.random.default_rng(9))
    b = generate_recall(real, y, old, new, cfg, np.random.default_rng(9))
    assert a.x.tobytes() == b.x.tobytes() and a.soft_targets.tobytes() == b.soft_targets.tobytes()


def test_ascent_mostly_increases_objective():
    # small rate: fixed-step ascent should usually improve the objective
    ups = total = 0
    for seed in range(10):
        old, new = _models(seed)
        cfg = RecallConfig(steps=6, rate=0.05, spatial=(4, 4))
        real = np.random.default_rng(seed).uniform(size=(10, 16))
        b = generate_recall(real, np.zeros(10, dtype=int), old, new, cfg, np.random.default_rng(seed))
        diffs = np.diff(b.objectives)
        ups += int(np.sum(diffs >= 0))
        total += diffs.size
    assert ups / total >= 0.9


def test_diversity_weight_does_not_reduce_distinct_classes():
    # paired over 20 seeds: more diversity weight, at least as many distinct recalled classes on average
    counts = {0.0: [], 16.0: []}
    for seed in range(20):
        old, new = _models(seed, dims=(16, 12, 12, 6), shift=0.3)
        real = np.random.default_rng(seed).uniform(size=(10, 16))
        for lam in counts:
            cfg = RecallConfig(steps=10, rate=0.5, weights=dataclasses.replace(LossWeights(), diversity=lam),
                               spatial=(4, 4))
            b = generate_recall(real, np.zeros(10, dtype=int), old, new, cfg, np.random.default_rng(seed))
            counts[lam].append(len(np.unique(b.targets)))
    assert np.mean(counts[16.0]) >= np.mean(counts[0.0])
