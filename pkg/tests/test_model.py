import numpy as np
import pytest

from arm_recall.errors import ConfigurationError, ContractError, DimensionError, FormatError
from arm_recall.model import (
    LagPolicy,
    ModelParams,
    forward,
    init_mlp,
    load_checkpoint,
    maybe_update_snapshot,
    predict_logits,
    save_checkpoint,
    sgd_update,
    take_snapshot,
)


def test_parameter_count_mnist_mlp():
    assert init_mlp((784, 400, 400, 10), 0).num_params() == 478_410


def test_init_deterministic_and_glorot_bounded():
    a, b = init_mlp((20, 8, 8, 3), 5), init_mlp((20, 8, 8, 3), 5)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.arrays(), b.arrays()))
    assert np.abs(a.weights[0].data).max() <= np.sqrt(6 / 28)
    assert all(np.all(bias.data == 0) for bias in a.biases)


def test_init_rejects_bad_dims():
    with pytest.raises(ContractError):
        init_mlp((4, 4, 3), 0)


def test_forward_shapes_and_trivial_cases():
    p = init_mlp((2, 4, 4, 3), 0)
    assert np.array_equal(forward(p, np.zeros((1, 2))).data, np.zeros((1, 3)))
    x = np.tile([[0.3, -0.7]], (5, 1))
    out = forward(p, x).data
    assert out.shape == (5, 3) and np.all(out == out[0])
    zero = ModelParams.from_arrays((2, 4, 4, 3), [np.zeros_like(a) for a in p.arrays()])
    assert np.all(forward(zero, x).data == 0)  # uniform softmax
    with pytest.raises(DimensionError):
        forward(p, np.zeros((1, 3)))


def test_predict_logits_agrees_with_forward(rng):
    p = init_mlp((6, 5, 5, 4), 2)
    x = rng.uniform(size=(9, 6))
    assert np.allclose(predict_logits(p, x, chunk=4), forward(p, x).data, atol=1e-14)


def test_snapshot_is_frozen_against_later_training(rng):
    p = init_mlp((6, 5, 5, 4), 2)
    snap = take_snapshot(p, 0)
    x = rng.uniform(size=(3, 6))
    before = predict_logits(snap, x)
    p2 = sgd_update(p, [np.ones_like(a) for a in p.arrays()], 0.1)
    assert np.array_equal(predict_logits(snap, x), before)
    assert not np.array_equal(predict_logits(p2, x), before)
    assert not any(t.requires_grad for t in snap.params.tensors)


def test_lag_policies():
    p = init_mlp((2, 3, 3, 2), 0)
    s = take_snapshot(p, 0)
    assert maybe_update_snapshot(s, p, 17, LagPolicy("unit")).step == 17
    task = LagPolicy("periodic", 100)
    assert maybe_update_snapshot(s, p, 99, task).step == 99
    assert maybe_update_snapshot(s, p, 50, task) is s
    b = LagPolicy("boundary")
    assert maybe_update_snapshot(s, p, 200, b, phase="before", labels=[2, 3], seen={0, 1}).step == 200
    assert maybe_update_snapshot(s, p, 201, b, phase="before", labels=[2, 3], seen={0, 1, 2, 3}) is s
    assert maybe_update_snapshot(s, p, 200, b, phase="after") is s
    with pytest.raises(ConfigurationError):
        LagPolicy("periodic")
    with pytest.raises(ContractError):
        maybe_update_snapshot(s, p, -1, b)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    p = init_mlp((7, 5, 5, 3), 11)
    save_checkpoint(tmp_path / "c.npz", p, {"note": "x"})
    q, extra = load_checkpoint(tmp_path / "c.npz")
    assert q.dims == p.dims and extra == {"note": "x"}
    assert all(a.tobytes() == b.tobytes() for a, b in zip(p.arrays(), q.arrays()))


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.npz").write_bytes(b"not a checkpoint")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.npz")
