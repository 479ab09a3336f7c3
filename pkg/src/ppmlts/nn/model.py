"""Model construction, forward/backward and the loss.

A model is a layer stack; the backward pass walks the stack in reverse and
each layer applies its own vector-Jacobian product (reverse-mode
differentiation at layer granularity).
"""
from __future__ import annotations

import copy
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import LabelOutOfRange, NonFiniteValue, ShapeMismatch, UnsupportedShape
from .layers import BiLSTM, Conv1D, Dense, Dropout, Flatten, GlobalAvgPool1D, Layer, MaxPool1D, ReLU

ARCHITECTURES = ("AlexNet1D", "LeNet1D", "FCN", "FDN", "LSTM")

# (kind, out_channels/kernel, kernel/stride, stride, pad) for the AlexNet conv stack
_ALEXNET_CONV = [
    ("conv", 96, 11, 4, 0),
    ("pool", 3, 2),
    ("conv", 256, 5, 1, 2),
    ("pool", 3, 2),
    ("conv", 384, 3, 1, 1),
    ("conv", 384, 3, 1, 1),
    ("conv", 256, 3, 1, 1),
    ("pool", 3, 2),
]
_LENET_CONV = [
    ("conv", 6, 5, 1, 0),
    ("pool", 2, 2),
    ("conv", 16, 5, 1, 0),
    ("pool", 2, 2),
]
LSTM_HIDDEN = 128


@dataclass(frozen=True)
class ModelSpec:
    architecture_id: str
    input_channels: int
    input_length: int
    num_classes: int

    def __post_init__(self):
        if self.architecture_id not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture_id!r}; choose from {ARCHITECTURES}")


class Model:
    def __init__(self, spec: ModelSpec, layers: Sequence[Layer], rng_seed: int):
        self.spec = spec
        self.layers = list(layers)
        self.rng_seed = rng_seed
        counts: dict[str, int] = {}
        for layer in self.layers:
            counts[layer.kind] = counts.get(layer.kind, 0) + 1
            layer.name = f"{layer.kind}{counts[layer.kind]}"

    # -- parameters -------------------------------------------------------
    @property
    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for layer in self.layers:
            for pname, p in layer.params.items():
                out[f"{layer.name}.{pname}"] = p
        return out

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.copy()) for k, v in self.parameters.items())

    def load_state_dict(self, state) -> None:
        params = self.parameters
        if list(state) != list(params):
            raise ShapeMismatch("parameter names differ")
        for k, v in state.items():
            if params[k].shape != np.shape(v):
                raise ShapeMismatch(f"{k}: {params[k].shape} vs {np.shape(v)}")
            params[k][...] = v

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters.values())

    # -- passes -----------------------------------------------------------
    def forward(self, batch: np.ndarray, train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        expected = (self.spec.input_channels, self.spec.input_length)
        if batch.ndim != 3 or batch.shape[1:] != expected:
            raise ShapeMismatch(f"expected batch of shape (B, {expected[0]}, {expected[1]}), got {batch.shape}")
        x = batch
        if not np.isfinite(x).all():
            raise NonFiniteValue("input batch contains NaN or Inf")
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=rng)
            if not np.isfinite(x).all():
                raise NonFiniteValue(f"non-finite activation after {layer.name}")
        return x

    def backward(self, dlogits: np.ndarray, mode: str = "sum") -> None:
        g = dlogits
        last = len(self.layers) - 1
        for pos in range(last, -1, -1):
            g = self.layers[pos].backward(g, mode=mode, need_gx=pos > 0)

    def collect_grads(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for layer in self.layers:
            for pname in layer.params:
                out[f"{layer.name}.{pname}"] = layer.grads[pname]
        return out

    def collect_sq_norms(self, batch_size: int) -> np.ndarray:
        total = np.zeros(batch_size)
        for layer in self.layers:
            if layer.params:
                total = total + layer.sq_norms
        return total

    def describe(self) -> list[str]:
        return [f"{layer.name}: {', '.join(f'{k}{v.shape}' for k, v in layer.params.items())}" for layer in self.layers]


def _build_conv_stack(plan, channels, length, rng, layers):
    for item in plan:
        if item[0] == "conv":
            _, out_ch, k, s, p = item
            out_len = (length + 2 * p - k) // s + 1
            if out_len < 1:
                continue
            layers += [Conv1D(channels, out_ch, k, s, p, rng=rng), ReLU()]
            channels, length = out_ch, out_len
        else:
            _, k, s = item
            pool = MaxPool1D(k, s)
            if pool.out_length(length) < 1:
                continue
            layers.append(pool)
            length = pool.out_length(length)
    return channels, length


def _validate_spec(spec: ModelSpec) -> None:
    if spec.input_channels < 1 or spec.input_length < 1:
        raise UnsupportedShape(f"no layer stack for input ({spec.input_channels} x {spec.input_length})")
    if spec.num_classes < 2:
        raise UnsupportedShape("num_classes must be at least 2")


def build_model(spec: ModelSpec, seed: int) -> Model:
    """Realise the layer stack for ``spec`` with fan-in scaled uniform weights.

    Convolution and pooling layers whose output would be shorter than one
    step are dropped, so very short series still get a valid network.
    """
    _validate_spec(spec)
    rng = np.random.default_rng(seed)
    c, length, n_cls = spec.input_channels, spec.input_length, spec.num_classes
    layers: list[Layer] = []
    arch = spec.architecture_id
    if arch == "AlexNet1D":
        c, length = _build_conv_stack(_ALEXNET_CONV, c, length, rng, layers)
        layers += [Flatten(), Dense(c * length, 512, rng), ReLU(), Dropout(0.5), Dense(512, 256, rng), ReLU(), Dense(256, n_cls, rng)]
    elif arch == "LeNet1D":
        c, length = _build_conv_stack(_LENET_CONV, c, length, rng, layers)
        layers += [Flatten(), Dense(c * length, 120, rng), ReLU(), Dense(120, 84, rng), ReLU(), Dense(84, n_cls, rng)]
    elif arch == "FCN":
        c, length = _build_conv_stack(_ALEXNET_CONV, c, length, rng, layers)
        layers += [GlobalAvgPool1D(), Dense(c, n_cls, rng)]
    elif arch == "FDN":
        layers += [Flatten(), Dense(c * length, 512, rng), ReLU(), Dense(512, 256, rng), ReLU(), Dense(256, n_cls, rng)]
    elif arch == "LSTM":
        layers += [
            BiLSTM(c, LSTM_HIDDEN, True, rng),
            BiLSTM(2 * LSTM_HIDDEN, LSTM_HIDDEN, False, rng),
            Dense(2 * LSTM_HIDDEN, n_cls, rng),
        ]
    return Model(spec, layers, seed)


def forward(model: Model, batch: np.ndarray) -> np.ndarray:
    """Inference-mode logits, shape (B, num_classes)."""
    return model.forward(batch, train=False)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def check_labels(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {num_classes})")
    return labels


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-example losses and d(loss_i)/d(logits_i)."""
    logp = log_softmax(logits)
    idx = np.arange(len(labels))
    losses = -logp[idx, labels]
    dlogits = np.exp(logp)
    dlogits[idx, labels] -= 1.0
    return losses, dlogits


def loss_and_grads(model: Model, batch: np.ndarray, labels):
    """Mean cross-entropy over the batch and its gradients (inference mode)."""
    loss, grads, _ = weighted_loss_and_grads(model, batch, labels)
    return loss, grads


def weighted_loss_and_grads(
    model: Model,
    batch: np.ndarray,
    labels,
    train: bool = False,
    rng: np.random.Generator | None = None,
    example_weights: np.ndarray | None = None,
):
    """Mean loss, gradients of ``sum_i w_i * loss_i`` and the logits.

    The default weights ``1/B`` give the gradient of the mean loss.
    """
    labels = check_labels(labels, model.spec.num_classes)
    logits = model.forward(batch, train=train, rng=rng)
    losses, dlogits = cross_entropy(logits, labels)
    if example_weights is None:
        example_weights = np.full(len(labels), 1.0 / len(labels))
    model.backward(dlogits * example_weights[:, None], mode="sum")
    return float(losses.mean()), model.collect_grads(), logits


def per_example_grads(model: Model, batch: np.ndarray, labels) -> list["OrderedDict[str, np.ndarray]"]:
    """Gradient of each example's own loss (inference mode)."""
    labels = check_labels(labels, model.spec.num_classes)
    logits = model.forward(batch, train=False)
    _, dlogits = cross_entropy(logits, labels)
    model.backward(dlogits, mode="per_example")
    stacked = model.collect_grads()
    return [OrderedDict((k, v[i]) for k, v in stacked.items()) for i in range(len(labels))]


def per_example_sq_norms(model: Model, dlogits: np.ndarray) -> np.ndarray:
    """Squared global gradient norm per example, after a forward pass.

    ``dlogits`` holds each example's own (unscaled) loss gradient.
    """
    model.backward(dlogits, mode="sq_norm")
    return model.collect_sq_norms(len(dlogits))


def predict(model: Model, samples: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Inference-mode logits for an arbitrarily large sample array."""
    outs = [model.forward(samples[i : i + chunk]) for i in range(0, len(samples), chunk)]
    if not outs:
        return np.zeros((0, model.spec.num_classes))
    return np.concatenate(outs)
