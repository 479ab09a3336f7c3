"""DP-SGD: per-example clipping and Gaussian noise on the summed gradient."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..data import Splits
from ..errors import InvalidConfig
from ..nn.model import Model, cross_entropy, per_example_sq_norms
from ..nn.train import History, TrainConfig, train
from .accountant import DEFAULT_DELTA, PrivacySpent, epsilon_for_steps

NOISE_DOMAIN = 0xD9  # separates noise streams from shuffling/dropout streams


@dataclass
class DpConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0
    delta: float = DEFAULT_DELTA
    # override the TrainConfig values when set
    batch_size: int | None = None
    epochs: int | None = None

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise InvalidConfig("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise InvalidConfig("noise_multiplier must be >= 0")
        if not 0 < self.delta < 1:
            raise InvalidConfig("delta must lie in (0, 1)")


Grads = Mapping[str, np.ndarray]


def global_norm(grads: Grads) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def clip_per_example(grads: Sequence[Grads], clip_norm: float) -> list["OrderedDict[str, np.ndarray]"]:
    """Scale each example's whole gradient to L2 norm at most ``clip_norm``."""
    out = []
    for g in grads:
        factor = 1.0 / max(1.0, global_norm(g) / clip_norm)
        out.append(OrderedDict((k, v * factor) for k, v in g.items()))
    return out


def dp_aggregate(
    clipped: Sequence[Grads],
    clip_norm: float,
    noise_multiplier: float,
    batch_size: int,
    rng: np.random.Generator,
) -> "OrderedDict[str, np.ndarray]":
    """``(sum_i g_i + N(0, (noise_multiplier * clip_norm)^2 I)) / batch_size``.

    One Gaussian draw per parameter tensor, in parameter order.
    """
    names = list(clipped[0])
    total = OrderedDict((k, np.zeros_like(clipped[0][k])) for k in names)
    for g in clipped:
        for k in names:
            total[k] += g[k]
    std = noise_multiplier * clip_norm
    out = OrderedDict()
    for k in names:
        if std > 0:
            total[k] = total[k] + rng.normal(0.0, std, size=total[k].shape)
        out[k] = total[k] / batch_size
    return out


def noise_rng(seed: int, step: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([NOISE_DOMAIN, seed, stream, step])


def make_dp_grad_fn(dp: DpConfig, seed: int, stream: int = 0):
    """Gradient function for :func:`ppmlts.nn.train.train` implementing DP-SGD.

    Per-example norms come from a norm-only backward pass; the clipped sum
    is then the gradient of ``sum_i s_i * loss_i`` with ``s_i`` the clip
    factor, so per-example gradient tensors are never materialised.
    """
    clip, sigma = dp.clip_norm, dp.noise_multiplier

    def grad_fn(model: Model, xb, yb, rng, step):
        logits = model.forward(xb, train=True, rng=rng)
        losses, dlogits = cross_entropy(logits, yb)
        norms = np.sqrt(per_example_sq_norms(model, dlogits))
        scale = 1.0 / np.maximum(1.0, norms / clip)
        b = len(yb)
        model.backward(dlogits * (scale / b)[:, None], mode="sum")
        grads = model.collect_grads()
        if sigma > 0:
            nrng = noise_rng(seed, step, stream)
            std = sigma * clip
            for k in grads:
                grads[k] = grads[k] + nrng.normal(0.0, std, size=grads[k].shape) / b
        return float(losses.mean()), grads, logits

    return grad_fn


def resolve_train_config(config: TrainConfig, dp: DpConfig) -> TrainConfig:
    changes = {}
    if dp.batch_size is not None:
        changes["batch_size"] = dp.batch_size
    if dp.epochs is not None:
        changes["epochs"] = dp.epochs
    if not changes:
        return config
    return TrainConfig(**{**config.__dict__, **changes})


def privacy_spent(n: int, batch_size: int, steps: int, dp: DpConfig) -> PrivacySpent:
    return epsilon_for_steps(min(1.0, batch_size / n), dp.noise_multiplier, steps, dp.delta)


def dp_train(
    model: Model, data: Splits, config: TrainConfig, dp: DpConfig, stream: int = 0
) -> tuple[Model, PrivacySpent, History]:
    """Train with DP-SGD; epsilon reflects the optimizer steps actually executed."""
    config = resolve_train_config(config, dp)
    trained, history = train(model, data, config, grad_fn=make_dp_grad_fn(dp, config.seed, stream), stream=stream)
    spent = privacy_spent(len(data.train), config.batch_size, history.steps, dp)
    return trained, spent, history
