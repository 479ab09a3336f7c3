import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import FD_TOL, finite_difference_errors, make_model, naive_matmul, small_stacks
from ppmlts.data import Splits, TimeSeriesDataset
from ppmlts.errors import LabelOutOfRange, ShapeMismatch, UnsupportedShape
from ppmlts.nn import ModelSpec, TrainConfig, build_model, forward, loss_and_grads, per_example_grads, softmax, train
from ppmlts.nn.layers import BiLSTM, Conv1D, Dense, Flatten, MaxPool1D
from ppmlts.nn.model import per_example_sq_norms, cross_entropy


@pytest.mark.parametrize("stack", ["dense", "conv_relu_pool", "conv_gap", "dropout", "bilstm"])
def test_finite_differences(stack):
    rng = np.random.default_rng(1)
    spec, layers = small_stacks(rng)[stack]
    model = make_model(spec, layers)
    x = rng.normal(size=(3, spec.input_channels, spec.input_length))
    y = rng.integers(0, spec.num_classes, size=3)
    errs = finite_difference_errors(model, x, y, train=stack == "dropout")
    assert max(errs.values()) < FD_TOL, errs


@pytest.mark.parametrize(
    "arch,c,length,k",
    [("AlexNet1D", 1, 140, 5), ("LeNet1D", 1, 140, 5), ("FCN", 1, 140, 5), ("FDN", 1, 46, 24), ("LSTM", 3, 12, 20)],
)
def test_architecture_shapes(arch, c, length, k):
    model = build_model(ModelSpec(arch, c, length, k), seed=7)
    logits = forward(model, np.random.default_rng(0).normal(size=(2, c, length)))
    assert logits.shape == (2, k)
    assert np.isfinite(logits).all()


def test_fdn_first_layer_width():
    model = build_model(ModelSpec("FDN", 1, 46, 24), 1)
    dense = [l for l in model.layers if isinstance(l, Dense)]
    assert dense[0].params["weight"].shape[0] == 46


def test_lstm_structure():
    model = build_model(ModelSpec("LSTM", 3, 182, 20), 0)
    assert sum(isinstance(l, BiLSTM) for l in model.layers) == 2
    assert isinstance(model.layers[-1], Dense)


def test_short_series_skip_layers():
    model = build_model(ModelSpec("AlexNet1D", 1, 24, 3), 0)
    assert forward(model, np.zeros((1, 1, 24))).shape == (1, 3)
    full = build_model(ModelSpec("AlexNet1D", 1, 140, 3), 0)
    assert len(model.layers) < len(full.layers)


def test_unsupported_shape():
    with pytest.raises(UnsupportedShape):
        build_model(ModelSpec("AlexNet1D", 1, 10, 1), 0)


def test_build_is_deterministic():
    spec = ModelSpec("LeNet1D", 1, 60, 3)
    a, b = build_model(spec, 4), build_model(spec, 4)
    for (ka, va), (kb, vb) in zip(a.parameters.items(), b.parameters.items()):
        assert ka == kb
        np.testing.assert_array_equal(va, vb)


def test_zero_head_gives_zero_logits():
    model = build_model(ModelSpec("LeNet1D", 1, 60, 4), 0)
    head = model.layers[-1]
    head.params["weight"][...] = 0
    head.params["bias"][...] = 0
    assert np.all(forward(model, np.random.default_rng(1).normal(size=(3, 1, 60))) == 0)


def test_identical_rows_and_permutation_equivariance():
    model = build_model(ModelSpec("FCN", 2, 50, 3), 0)
    rng = np.random.default_rng(2)
    row = rng.normal(size=(1, 2, 50))
    out = forward(model, np.repeat(row, 4, axis=0))
    assert np.all(out == out[0])
    x = rng.normal(size=(5, 2, 50))
    perm = rng.permutation(5)
    np.testing.assert_allclose(forward(model, x)[perm], forward(model, x[perm]), rtol=0, atol=1e-12)


def test_dense_matches_matmul_oracle():
    rng = np.random.default_rng(3)
    spec = ModelSpec("FDN", 1, 7, 3)
    model = make_model(spec, [Flatten(), Dense(7, 5, rng), Dense(5, 3, rng)])
    x = rng.normal(size=(4, 1, 7))
    w1, b1, w2, b2 = model.parameters.values()
    expected = naive_matmul(naive_matmul(x.reshape(4, 7), w1) + b1, w2) + b2
    np.testing.assert_allclose(forward(model, x), expected, rtol=0, atol=1e-12)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(4)
    conv = Conv1D(2, 3, 3, stride=2, pad=1, rng=rng)
    x = rng.normal(size=(2, 2, 9))
    y = conv.forward(x)
    w, b = conv.params["weight"], conv.params["bias"]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    for n in range(2):
        for o in range(3):
            for t in range(y.shape[2]):
                ref = b[o] + sum(w[o, c, j] * xp[n, c, 2 * t + j] for c in range(2) for j in range(3))
                assert abs(y[n, o, t] - ref) < 1e-12


def test_maxpool_values():
    pool = MaxPool1D(3, 2)
    x = np.array([[[1.0, 5.0, 2.0, 0.0, 7.0, 3.0, 1.0]]])
    np.testing.assert_array_equal(pool.forward(x), [[[5.0, 7.0, 7.0]]])


def test_loss_examples():
    model = build_model(ModelSpec("FDN", 1, 4, 5), 0)
    head = model.layers[-1]
    head.params["weight"][...] = 0
    head.params["bias"][...] = 0
    loss, _ = loss_and_grads(model, np.ones((2, 1, 4)), [0, 3])
    assert abs(loss - math.log(5)) < 1e-12
    losses, _ = cross_entropy(np.array([[1e3, 0.0, 0.0]]), np.array([0]))
    assert losses[0] < 1e-12
    with pytest.raises(LabelOutOfRange):
        loss_and_grads(model, np.ones((1, 1, 4)), [5])
    with pytest.raises(ShapeMismatch):
        forward(model, np.ones((1, 2, 4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 6))
def test_softmax_rows(seed, k):
    logits = np.random.default_rng(seed).normal(scale=20, size=(4, k))
    p = softmax(logits)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    losses, _ = cross_entropy(logits, np.zeros(4, dtype=int))
    assert np.all(losses >= 0)


@pytest.mark.parametrize("stack", ["dense", "conv_relu_pool", "conv_gap", "bilstm"])
def test_per_example_grads(stack):
    rng = np.random.default_rng(5)
    spec, layers = small_stacks(rng)[stack]
    model = make_model(spec, layers)
    x = rng.normal(size=(4, spec.input_channels, spec.input_length))
    y = rng.integers(0, spec.num_classes, size=4)
    per = per_example_grads(model, x, y)
    for i in range(4):
        _, single = loss_and_grads(model, x[i : i + 1], y[i : i + 1])
        for k in single:
            np.testing.assert_allclose(per[i][k], single[k], rtol=0, atol=1e-12)
    _, batch = loss_and_grads(model, x, y)
    for k in batch:
        np.testing.assert_allclose(np.mean([g[k] for g in per], axis=0), batch[k], rtol=0, atol=1e-10)
    # ghost norms equal the norms of the materialised per-example gradients
    _, dlogits = cross_entropy(model.forward(x), y)
    sq = per_example_sq_norms(model, dlogits)
    ref = [sum(float((g**2).sum()) for g in per[i].values()) for i in range(4)]
    np.testing.assert_allclose(sq, ref, rtol=1e-10)


def test_per_example_identical_examples():
    model = build_model(ModelSpec("LeNet1D", 1, 30, 3), 0)
    x = np.repeat(np.random.default_rng(6).normal(size=(1, 1, 30)), 2, axis=0)
    a, b = per_example_grads(model, x, [1, 1])
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def _separable(n=20, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    samples = rng.normal(scale=0.3, size=(n, 1, 8)) + np.where(labels == 1, 1.0, -1.0)[:, None, None]
    return TimeSeriesDataset(samples, labels, ["neg", "pos"])


def test_train_separable_reaches_perfect_f1():
    ds = _separable()
    val = _separable(10, seed=1)
    val.split_tag = "val"
    model = build_model(ModelSpec("FDN", 1, 8, 2), 0)
    cfg = TrainConfig(epochs=50, batch_size=4, learning_rate=0.05, early_stop_patience=50, lr_halving_patience=50)
    trained, hist = train(model, Splits(ds, val), cfg)
    assert hist.epochs_run <= 50
    assert max(r.train_f1 for r in hist.records) == 1.0


def test_zero_learning_rate_freezes_parameters():
    ds = _separable()
    model = build_model(ModelSpec("FDN", 1, 8, 2), 0)
    trained, _ = train(model, Splits(ds, ds), TrainConfig(epochs=3, batch_size=4, learning_rate=0.0))
    for k, v in model.parameters.items():
        np.testing.assert_array_equal(trained.parameters[k], v)


def test_training_is_deterministic():
    ds = _separable()
    model = build_model(ModelSpec("AlexNet1D", 1, 8, 2), 3)
    cfg = TrainConfig(epochs=3, batch_size=4, learning_rate=0.01, seed=9)
    a, ha = train(model, Splits(ds, ds), cfg)
    b, hb = train(model, Splits(ds, ds), cfg)
    assert ha.records == hb.records
    for k in a.parameters:
        np.testing.assert_array_equal(a.parameters[k], b.parameters[k])
