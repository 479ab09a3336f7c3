"""Shared test oracles: finite differences and small hand-built models."""
from __future__ import annotations

import numpy as np

from ppmlts.nn.layers import BiLSTM, Conv1D, Dense, Dropout, Flatten, GlobalAvgPool1D, MaxPool1D, ReLU
from ppmlts.nn.model import Model, ModelSpec, cross_entropy, weighted_loss_and_grads

FD_STEP = 1e-5
FD_TOL = 1e-4

# acceptance results, filled by test_acceptance.py and printed by conftest.py
CRITERIA = tuple(range(1, 12))
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def small_stacks(rng: np.random.Generator) -> dict[str, tuple[ModelSpec, list]]:
    """One tiny model per layer type (channels, length and classes kept small)."""
    spec = lambda c, length, k: ModelSpec("FDN", c, length, k)
    return {
        "dense": (spec(2, 5, 3), [Flatten(), Dense(10, 6, rng), ReLU(), Dense(6, 3, rng)]),
        "conv_relu_pool": (
            spec(2, 12, 3),
            [Conv1D(2, 3, 3, stride=2, pad=1, rng=rng), ReLU(), MaxPool1D(3, 2), Flatten(), Dense(6, 3, rng)],
        ),
        "conv_gap": (spec(1, 9, 2), [Conv1D(1, 4, 4, stride=1, pad=0, rng=rng), GlobalAvgPool1D(), Dense(4, 2, rng)]),
        "dropout": (spec(1, 6, 3), [Flatten(), Dense(6, 8, rng), Dropout(0.5), Dense(8, 3, rng)]),
        "bilstm": (spec(2, 5, 3), [BiLSTM(2, 4, True, rng), BiLSTM(8, 3, False, rng), Dense(6, 3, rng)]),
    }


def make_model(spec: ModelSpec, layers: list, seed: int = 0) -> Model:
    return Model(spec, layers, seed)


def mean_loss(model: Model, x: np.ndarray, y: np.ndarray, train: bool = False, seed: int = 0) -> float:
    rng = np.random.default_rng(seed) if train else None
    losses, _ = cross_entropy(model.forward(x, train=train, rng=rng), y)
    return float(losses.mean())


def finite_difference_errors(model: Model, x: np.ndarray, y: np.ndarray, train: bool = False, max_entries: int = 40) -> dict[str, float]:
    """Relative error of analytic vs central-difference gradients, per parameter tensor.

    Dropout is handled by replaying the same mask (a freshly seeded rng on
    every evaluation). At most ``max_entries`` entries per tensor are probed.
    """
    rng = np.random.default_rng(0) if train else None
    _, grads, _ = weighted_loss_and_grads(model, x, y, train=train, rng=rng)
    grads = {k: v.copy() for k, v in grads.items()}
    pick = np.random.default_rng(123)
    out = {}
    for name, p in model.parameters.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size) if flat.size <= max_entries else pick.choice(flat.size, max_entries, replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + FD_STEP
            up = mean_loss(model, x, y, train)
            flat[i] = old - FD_STEP
            down = mean_loss(model, x, y, train)
            flat[i] = old
            numeric[j] = (up - down) / (2 * FD_STEP)
        analytic = grads[name].reshape(-1)[idx]
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        out[name] = float(np.linalg.norm(analytic - numeric) / scale)
    return out


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product, independent of BLAS."""
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out
