import warnings
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppmlts.data import Splits, TimeSeriesDataset, partition_silos
from ppmlts.dp import DpConfig
from ppmlts.errors import ClassCountMismatch, EmptySilo, InvalidConfig, ShapeMismatch
from ppmlts.federated import (
    EnsembleScheme,
    EnsembleVariant,
    FederatedConfig,
    aggregate_weights,
    current_client,
    ensemble_predict,
    run_fedavg,
    silo_weights,
    train_ensemble,
)
from ppmlts.nn import ModelSpec, TrainConfig, build_model, train
from ppmlts.nn.layers import Dense, Flatten
from ppmlts.nn.model import Model

ALL_SCHEMES = list(EnsembleVariant)


# -- helpers --------------------------------------------------------------------------


def fixed_logit_model(logits: np.ndarray) -> Model:
    """A model whose logits on ``onehot_batch(B)`` row i are ``logits[i]``."""
    b, k = logits.shape
    dense = Dense(b, k, np.random.default_rng(0))
    dense.params["weight"][...] = logits
    dense.params["bias"][...] = 0.0
    return Model(ModelSpec("FDN", 1, b, k), [Flatten(), dense], 0)


def onehot_batch(b: int) -> np.ndarray:
    return np.eye(b)[:, None, :]


def _blobs(n, seed, classes=3, length=12):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    centers = np.linspace(-1.5, 1.5, classes)
    samples = rng.normal(scale=0.5, size=(n, 1, length)) + centers[labels][:, None, None]
    return TimeSeriesDataset(samples, labels, [f"c{i}" for i in range(classes)])


SPEC = ModelSpec("LeNet1D", 1, 12, 3)
CFG = TrainConfig(epochs=3, batch_size=8, learning_rate=0.05, seed=2)


# -- aggregation ----------------------------------------------------------------------


def test_aggregate_examples():
    same = {"w": np.array([[1.0, -2.0]]), "b": np.array([0.5])}
    out = aggregate_weights([same, same, same], [3, 1, 7])
    for k in same:
        np.testing.assert_allclose(out[k], same[k], rtol=0, atol=1e-15)
    out = aggregate_weights([{"x": np.array(1.0)}, {"x": np.array(3.0)}], [1, 3])
    assert out["x"] == 2.5
    out = aggregate_weights([{"x": np.array([1.0, 2.0])}, {"x": np.array([5.0, 0.0])}], [4, 4])
    np.testing.assert_array_equal(out["x"], [3.0, 1.0])


def test_aggregate_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        aggregate_weights([{"x": np.zeros(2)}, {"x": np.zeros(3)}], [1, 1])
    with pytest.raises(ShapeMismatch):
        aggregate_weights([{"x": np.zeros(2)}, {"y": np.zeros(2)}], [1, 1])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10**6), st.floats(-100, 100))
def test_aggregate_affine_consistency(n, seed, k):
    rng = np.random.default_rng(seed)
    params = [{"w": rng.normal(size=(3, 2))} for _ in range(n)]
    counts = rng.integers(1, 50, size=n)
    base = aggregate_weights(params, counts)["w"]
    shifted = aggregate_weights([{"w": p["w"] + k} for p in params], counts)["w"]
    np.testing.assert_allclose(shifted, base + k, rtol=0, atol=1e-10)
    perm = rng.permutation(n)
    reordered = aggregate_weights([params[i] for i in perm], counts[perm])["w"]
    np.testing.assert_allclose(reordered, base, rtol=0, atol=1e-13)


# -- FedAVG ---------------------------------------------------------------------------


def test_single_client_fedavg_is_centralized_training():
    train_ds, val = _blobs(48, 0), _blobs(12, 1)
    val.split_tag = "val"
    silos = partition_silos(train_ds, 1)
    fed_model, fed_hist = run_fedavg(SPEC, silos, CFG, FederatedConfig(1, 1, rounds=CFG.epochs), val)
    central, hist = train(build_model(SPEC, CFG.seed), Splits(train_ds, val), CFG)
    for k in central.parameters:
        np.testing.assert_array_equal(fed_model.parameters[k], central.parameters[k])
    assert [r.val_loss for r in fed_hist.records] == [r.val_loss for r in hist.records]


def test_fedavg_partial_participation_is_deterministic():
    train_ds, val = _blobs(60, 0), _blobs(12, 1)
    silos = partition_silos(train_ds, 4, seed=1)
    fed = FederatedConfig(4, 2, rounds=3, seed=5)
    a, _ = run_fedavg(SPEC, silos, CFG, fed, val)
    b, _ = run_fedavg(SPEC, silos, CFG, fed, val)
    c, _ = run_fedavg(SPEC, silos, CFG, FederatedConfig(4, 2, rounds=3, seed=6), val)
    for k in a.parameters:
        np.testing.assert_array_equal(a.parameters[k], b.parameters[k])
    assert any(not np.array_equal(a.parameters[k], c.parameters[k]) for k in a.parameters)


def test_fedavg_one_minibatch_rounds():
    train_ds, val = _blobs(40, 0), _blobs(12, 1)
    _, hist = run_fedavg(SPEC, partition_silos(train_ds, 2), CFG, FederatedConfig(2, rounds=2, local_epochs=0), val)
    assert hist.steps == 2  # one minibatch per round


def test_empty_silo_is_skipped_with_warning():
    train_ds, val = _blobs(30, 0), _blobs(9, 1)
    empty = train_ds.subset([])
    with pytest.warns(UserWarning, match="empty silo"):
        models, _, _ = train_ensemble(SPEC, [train_ds, empty], TrainConfig(epochs=1, batch_size=8, seed=0), val)
    assert len(models) == 1
    with pytest.raises(EmptySilo), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        run_fedavg(SPEC, [empty, empty], CFG, FederatedConfig(2, rounds=1), val)


def test_federated_config_validation():
    with pytest.raises(InvalidConfig):
        FederatedConfig(2, 3)
    with pytest.raises(InvalidConfig):
        FederatedConfig(0)
    assert FederatedConfig(5).clients_per_round == 5


# -- data isolation -------------------------------------------------------------------


ACCESS_LOG: list[tuple[int | None, int | None]] = []


@dataclass
class AuditedDataset(TimeSeriesDataset):
    """Records (owner, running client) on every read of the raw arrays."""

    owner: int | None = None

    def __getattribute__(self, name):
        if name in ("samples", "labels"):
            ACCESS_LOG.append((object.__getattribute__(self, "owner"), current_client()))
        return object.__getattribute__(self, name)


def _audited_silos(n):
    part = partition_silos(_blobs(40, 0), n, seed=3)
    return [AuditedDataset(s.samples, s.labels, s.label_names, owner=k) for k, s in enumerate(part.silos)]


@pytest.mark.parametrize("mode", ["fedavg", "ensemble", "ensemble_dp", "fedavg_dp"])
def test_silo_data_is_only_read_by_its_owner(mode):
    silos = _audited_silos(3)
    val = _blobs(9, 1)
    ACCESS_LOG.clear()
    cfg = TrainConfig(epochs=2, batch_size=8, learning_rate=0.05, seed=0)
    dp = DpConfig(clip_norm=1.0, noise_multiplier=0.5) if mode.endswith("dp") else None
    if mode.startswith("fedavg"):
        run_fedavg(SPEC, silos, cfg, FederatedConfig(3, 2, rounds=2), val, dp=dp)
    else:
        train_ensemble(SPEC, silos, cfg, val, dp=dp)
    silo_weights(silos)
    assert ACCESS_LOG, "the audit double saw no access"
    assert {owner for owner, _ in ACCESS_LOG} == {0, 1, 2}
    leaks = [(owner, who) for owner, who in ACCESS_LOG if owner != who]
    assert not leaks


# -- ensembles ------------------------------------------------------------------------


def test_single_model_any_scheme_is_argmax():
    logits = np.random.default_rng(0).normal(size=(6, 4))
    m = fixed_logit_model(logits)
    for v in ALL_SCHEMES:
        np.testing.assert_array_equal(ensemble_predict([m], EnsembleScheme(v), onehot_batch(6)), logits.argmax(1))


def test_majority_vote_examples():
    a = fixed_logit_model(np.array([[5.0, 0.0, 0.0]]))
    b = fixed_logit_model(np.array([[0.0, 9.0, 0.0]]))
    assert ensemble_predict([a, a, b], EnsembleScheme("MajorityVote"), onehot_batch(1)).tolist() == [0]
    # 1-1 tie between classes 2 and 1 -> lowest index
    c = fixed_logit_model(np.array([[0.0, 0.0, 3.0]]))
    assert ensemble_predict([c, b], EnsembleScheme("MajorityVote"), onehot_batch(1)).tolist() == [1]


def test_weighted_softmax_zero_weight():
    rng = np.random.default_rng(1)
    m1 = fixed_logit_model(rng.normal(size=(10, 3)))
    m2 = fixed_logit_model(rng.normal(scale=50, size=(10, 3)))
    out = ensemble_predict([m1, m2], EnsembleScheme("WeightedSoftmaxAveraging", weights=[1.0, 0.0]), onehot_batch(10))
    np.testing.assert_array_equal(out, ensemble_predict([m1], EnsembleScheme(), onehot_batch(10)))
    with pytest.raises(InvalidConfig):
        EnsembleScheme("WeightedSoftmaxAveraging", weights=[0.7, 0.7])


def test_naive_bayes_uses_priors():
    # both members are unsure between classes 0 and 1; a rare class-1 prior
    # is divided out once (K - 1 = 1) and tips the decision to class 1
    p = np.log(np.array([[0.55, 0.45]]))
    m = fixed_logit_model(p)
    uniform = ensemble_predict([m, m], EnsembleScheme("NaiveBayesCombination"), onehot_batch(1))
    skewed = ensemble_predict([m, m], EnsembleScheme("NaiveBayesCombination", priors=[0.9, 0.1]), onehot_batch(1))
    assert uniform.tolist() == [0] and skewed.tolist() == [1]
    # a class absent from the pooled training data is never predicted
    zero = ensemble_predict([m, m], EnsembleScheme("NaiveBayesCombination", priors=[0.0, 1.0]), onehot_batch(1))
    assert zero.tolist() == [1]


def test_class_count_mismatch():
    a = fixed_logit_model(np.zeros((2, 3)))
    b = fixed_logit_model(np.zeros((2, 4)))
    with pytest.raises(ClassCountMismatch):
        ensemble_predict([a, b], EnsembleScheme(), onehot_batch(2))
    with pytest.raises(ClassCountMismatch):
        ensemble_predict([a], EnsembleScheme("NaiveBayesCombination", priors=[0.5, 0.5]), onehot_batch(2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5), st.integers(2, 5))
def test_majority_vote_monotone_invariance(seed, n_models, k):
    rng = np.random.default_rng(seed)
    logits = [rng.normal(size=(8, k)) for _ in range(n_models)]
    transforms = [lambda z: np.exp(z), lambda z: 3 * z + 7, lambda z: z**3, lambda z: np.tanh(z / 4)]
    base = ensemble_predict([fixed_logit_model(l) for l in logits], EnsembleScheme("MajorityVote"), onehot_batch(8))
    moved = [fixed_logit_model(transforms[i % 4](l)) for i, l in enumerate(logits)]
    np.testing.assert_array_equal(ensemble_predict(moved, EnsembleScheme("MajorityVote"), onehot_batch(8)), base)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6), st.sampled_from(ALL_SCHEMES))
def test_identical_models_equal_single_model(seed, n_models, variant):
    logits = np.random.default_rng(seed).normal(scale=3, size=(8, 4))
    m = fixed_logit_model(logits)
    out = ensemble_predict([m] * n_models, EnsembleScheme(variant), onehot_batch(8))
    np.testing.assert_array_equal(out, logits.argmax(1))


def test_single_client_ensemble_is_baseline():
    train_ds, val = _blobs(48, 0), _blobs(12, 1)
    (model,), _, (spent,) = train_ensemble(SPEC, partition_silos(train_ds, 1), CFG, val)
    base, _ = train(build_model(SPEC, CFG.seed), Splits(train_ds, val), CFG)
    assert spent is None
    for k in base.parameters:
        np.testing.assert_array_equal(model.parameters[k], base.parameters[k])


def test_dp_ensemble_reports_privacy_per_client():
    train_ds, val = _blobs(48, 0), _blobs(12, 1)
    dp = DpConfig(clip_norm=0.5, noise_multiplier=0.1)
    models, hists, spent = train_ensemble(SPEC, partition_silos(train_ds, 2), TrainConfig(epochs=2, batch_size=8, seed=0), val, dp)
    assert len(models) == 2 and all(s is not None and s.steps == h.steps for s, h in zip(spent, hists))
    # clients train on their own shuffles even though they start from one init
    assert any(not np.array_equal(models[0].parameters[k], models[1].parameters[k]) for k in models[0].parameters)


def test_silo_weights_are_proportional():
    ds = _blobs(30, 0)
    w = silo_weights([ds.subset(range(10)), ds.subset(range(10, 30))])
    np.testing.assert_allclose(w, [1 / 3, 2 / 3])


def test_audit_double_flags_server_side_reads():
    silos = _audited_silos(2)
    ACCESS_LOG.clear()
    _ = silos[1].labels  # a server reading raw data directly
    assert ACCESS_LOG == [(1, None)]
