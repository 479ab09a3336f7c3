"""Simulated federated learning: FedAVG, federated ensembling and DP + ensembling.

Each client's silo is held by a :class:`ClientState`; the server only ever
sees parameters, sample counts and predictions. Raw data is touched inside
``ClientState`` methods, which run under that client's scope (see
:func:`current_client`), so tests can audit access.
"""
from __future__ import annotations

import contextlib
import contextvars
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .data import SiloPartition, Splits, TimeSeriesDataset
from .dp.sgd import DpConfig, dp_train, make_dp_grad_fn
from .errors import ClassCountMismatch, EmptySilo, InvalidConfig, ShapeMismatch
from .nn.model import Model, ModelSpec, build_model, predict, softmax
from .nn.train import History, TrainConfig, fit_loop, plain_grads, sgd_epoch, train, train_rng

PROB_FLOOR = 1e-12
_client_scope: contextvars.ContextVar[int | None] = contextvars.ContextVar("client_scope", default=None)


def current_client() -> int | None:
    """Id of the client whose code is running, or None on the server."""
    return _client_scope.get()


@contextlib.contextmanager
def client_scope(client_id: int):
    token = _client_scope.set(client_id)
    try:
        yield
    finally:
        _client_scope.reset(token)


@dataclass
class FederatedConfig:
    num_clients: int = 2
    clients_per_round: int | None = None  # None means all clients
    rounds: int = 100
    local_epochs: int = 1  # 0 means a single minibatch per round
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.clients_per_round is None:
            self.clients_per_round = self.num_clients
        if self.num_clients < 1:
            raise InvalidConfig("num_clients must be >= 1")
        if not 1 <= self.clients_per_round <= self.num_clients:
            raise InvalidConfig("clients_per_round must lie in [1, num_clients]")
        if self.rounds < 1:
            raise InvalidConfig("rounds must be >= 1")
        if self.local_epochs < 0:
            raise InvalidConfig("local_epochs must be >= 0")


class EnsembleVariant(str, Enum):
    WEIGHTED_SOFTMAX = "WeightedSoftmaxAveraging"
    MAJORITY_VOTE = "MajorityVote"
    NAIVE_BAYES = "NaiveBayesCombination"


@dataclass
class EnsembleScheme:
    variant: EnsembleVariant = EnsembleVariant.WEIGHTED_SOFTMAX
    weights: Sequence[float] | None = None  # WeightedSoftmax only; None means uniform
    priors: Sequence[float] | None = None  # NaiveBayes only; None means uniform

    def __post_init__(self):
        self.variant = EnsembleVariant(self.variant)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if (w < 0).any() or not np.isclose(w.sum(), 1.0):
                raise InvalidConfig("ensemble weights must be >= 0 and sum to 1")


@dataclass
class ClientState:
    """One federated participant. ``silo`` is private to the client."""

    client_id: int
    silo: TimeSeriesDataset = field(repr=False)
    model: Model | None = field(default=None, repr=False)
    rng: np.random.Generator | None = field(default=None, repr=False)
    steps: int = 0

    @property
    def num_samples(self) -> int:
        with client_scope(self.client_id):
            return len(self.silo)

    def class_counts(self) -> np.ndarray:
        with client_scope(self.client_id):
            return self.silo.class_counts()

    def local_update(self, global_state, lr: float, config: TrainConfig, local_epochs: int, grad_fn=plain_grads):
        """Train from ``global_state`` on the silo; returns (state, loss, f1, steps)."""
        with client_scope(self.client_id):
            self.model.load_state_dict(global_state)
            if local_epochs == 0:
                silo = self.silo.subset(self.rng.permutation(len(self.silo))[: config.batch_size])
                epochs = 1
            else:
                silo, epochs = self.silo, local_epochs
            loss = f1 = 0.0
            steps = 0
            for _ in range(epochs):
                loss, f1, s = sgd_epoch(self.model, silo, lr, config.batch_size, self.rng, grad_fn, self.steps)
                self.steps += s
                steps += s
            return self.model.state_dict(), loss, f1, steps

    def fit_independent(self, model: Model, val: TimeSeriesDataset, config: TrainConfig, dp: DpConfig | None):
        """Train a standalone model on the silo (federated ensembling)."""
        with client_scope(self.client_id):
            data = Splits(self.silo, val)
            if dp is None:
                trained, history = train(model, data, config, stream=self.client_id)
                return trained, history, None
            trained, spent, history = dp_train(model, data, config, dp, stream=self.client_id)
            return trained, history, spent


def make_clients(silos: SiloPartition | Sequence[TimeSeriesDataset]) -> list[ClientState]:
    parts = silos.silos if isinstance(silos, SiloPartition) else list(silos)
    return [ClientState(k, s) for k, s in enumerate(parts)]


def aggregate_weights(params: Sequence[Mapping[str, np.ndarray]], counts: Sequence[int]) -> "OrderedDict[str, np.ndarray]":
    """Sample-count weighted element-wise mean of parameter sets (fixed reduction order)."""
    if not params:
        raise ValueError("no parameter sets to aggregate")
    counts = np.asarray(counts, dtype=np.float64)
    if len(counts) != len(params) or (counts <= 0).any():
        raise ValueError("need one positive count per parameter set")
    names = list(params[0])
    for p in params[1:]:
        if list(p) != names or any(np.shape(p[k]) != np.shape(params[0][k]) for k in names):
            raise ShapeMismatch("parameter sets are not shape-compatible")
    weights = counts / counts.sum()
    out = OrderedDict()
    for k in names:
        acc = np.zeros_like(params[0][k], dtype=np.float64)
        for w, p in zip(weights, params):
            acc += w * p[k]
        out[k] = acc
    return out


def _active_clients(clients: list[ClientState]) -> list[ClientState]:
    active = []
    for c in clients:
        if c.num_samples == 0:
            warnings.warn(f"client {c.client_id} has an empty silo and is skipped", stacklevel=3)
        else:
            active.append(c)
    if not active:
        raise EmptySilo("every silo is empty")
    return active


def run_fedavg(
    spec: ModelSpec,
    silos: SiloPartition | Sequence[TimeSeriesDataset],
    config: TrainConfig,
    fed: FederatedConfig,
    val: TimeSeriesDataset,
    dp: DpConfig | None = None,
) -> tuple[Model, History]:
    """FedAVG with early stopping of the global model on ``val``.

    One fit-loop epoch is one communication round. Client ``k`` shuffles with
    stream ``k`` of ``config.seed``, so a single client reproduces centralized
    training exactly.
    """
    clients = _active_clients(make_clients(silos))
    if len(clients) < fed.clients_per_round:
        raise InvalidConfig("fewer non-empty silos than clients_per_round")
    global_model = build_model(spec, config.seed)
    for c in clients:
        c.model = global_model.copy()
        c.rng = train_rng(config.seed, c.client_id)
    server_rng = np.random.default_rng([config.seed, fed.seed, 0xFEDA])
    round_cfg = TrainConfig(**{**config.__dict__, "epochs": fed.rounds})

    def run_round(model: Model, lr: float, rnd: int):
        if fed.clients_per_round == len(clients):
            chosen = clients
        else:
            pick = np.sort(server_rng.choice(len(clients), fed.clients_per_round, replace=False))
            chosen = [clients[i] for i in pick]
        state = model.state_dict()
        results = []
        for c in chosen:
            grad_fn = plain_grads if dp is None else make_dp_grad_fn(dp, config.seed, c.client_id)
            results.append(c.local_update(state, lr, config, fed.local_epochs, grad_fn))
        counts = [c.num_samples for c in chosen]
        model.load_state_dict(aggregate_weights([r[0] for r in results], counts))
        total = float(sum(counts))
        loss = sum(n * r[1] for n, r in zip(counts, results)) / total
        f1 = sum(n * r[2] for n, r in zip(counts, results)) / total
        return loss, f1, max(r[3] for r in results)

    history = fit_loop(global_model, val, round_cfg, run_round)
    return global_model, history


def train_ensemble(
    spec: ModelSpec,
    silos: SiloPartition | Sequence[TimeSeriesDataset],
    config: TrainConfig,
    val: TimeSeriesDataset,
    dp: DpConfig | None = None,
) -> tuple[list[Model], list[History], list]:
    """Train one independent model per client; no parameters are exchanged.

    Returns (models, histories, privacy spent per client or None).
    """
    clients = _active_clients(make_clients(silos))
    base = build_model(spec, config.seed)
    models, histories, spent = [], [], []
    for c in clients:
        m, h, s = c.fit_independent(base, val, config, dp)
        models.append(m)
        histories.append(h)
        spent.append(s)
    return models, histories, spent


def silo_weights(silos: SiloPartition | Sequence[TimeSeriesDataset]) -> list[float]:
    counts = np.array([c.num_samples for c in _active_clients(make_clients(silos))], dtype=np.float64)
    return list(counts / counts.sum())


def ensemble_predict(models: Sequence[Model], scheme: EnsembleScheme, batch: np.ndarray) -> np.ndarray:
    """Combine per-model predictions into one label per row."""
    if not models:
        raise ValueError("empty ensemble")
    n_cls = models[0].spec.num_classes
    if any(m.spec.num_classes != n_cls for m in models):
        raise ClassCountMismatch("ensemble members disagree on num_classes")
    logits = [predict(m, batch) for m in models]
    variant = scheme.variant
    if variant is EnsembleVariant.MAJORITY_VOTE:
        votes = np.zeros((len(batch), n_cls), dtype=np.int64)
        rows = np.arange(len(batch))
        for lg in logits:
            votes[rows, lg.argmax(axis=1)] += 1
        return votes.argmax(axis=1)  # first maximum = lowest class index
    if variant is EnsembleVariant.WEIGHTED_SOFTMAX:
        w = np.full(len(models), 1.0 / len(models)) if scheme.weights is None else np.asarray(scheme.weights, float)
        if len(w) != len(models):
            raise InvalidConfig("one weight per model required")
        mix = sum(wi * softmax(lg) for wi, lg in zip(w, logits))
        return mix.argmax(axis=1)
    priors = np.full(n_cls, 1.0 / n_cls) if scheme.priors is None else np.asarray(scheme.priors, float)
    if len(priors) != n_cls:
        raise ClassCountMismatch("priors length differs from num_classes")
    # a class with zero prior cannot occur; flooring it would reward it instead
    with np.errstate(divide="ignore"):
        score = np.where(priors > 0, -(len(models) - 1) * np.log(np.clip(priors, PROB_FLOOR, 1.0)), -np.inf)
    score = np.broadcast_to(score, (len(batch), n_cls))
    for lg in logits:
        score = score + np.log(np.clip(softmax(lg), PROB_FLOOR, 1.0))
    return score.argmax(axis=1)
