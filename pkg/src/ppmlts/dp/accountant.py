"""Renyi-DP accounting for the sampled Gaussian mechanism.

Integer orders only, using the binomial-expansion bound

    A_alpha = sum_k C(alpha, k) (1-q)^(alpha-k) q^k exp(k(k-1) / (2 sigma^2))
    RDP(alpha) = log(A_alpha) / (alpha - 1)

evaluated in log space. RDP composes additively over steps and is
converted to (epsilon, delta) by minimising over the order grid.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..errors import InvalidConfig, NumericalOverflow

DEFAULT_ORDERS: tuple[int, ...] = tuple(range(2, 513))
DEFAULT_DELTA = 1e-5


@dataclass(frozen=True)
class PrivacySpent:
    epsilon: float
    delta: float
    optimal_order: float
    steps: int = 0
    sampling_rate: float = 0.0


@dataclass(frozen=True)
class RdpCurve:
    orders: tuple[int, ...]
    rdp_values: np.ndarray  # cumulative over `steps`
    steps: int = 1

    def __add__(self, other: "RdpCurve") -> "RdpCurve":
        if self.orders != other.orders:
            raise ValueError("order grids differ")
        return RdpCurve(self.orders, self.rdp_values + other.rdp_values, self.steps + other.steps)


@lru_cache(maxsize=8)
def _binomial_layout(orders: tuple[int, ...]):
    """Order-only parts of the packed term list: log C(alpha, k), k, alpha - k, row starts.

    Row ``i`` holds the ``orders[i] + 1`` terms k = 0..alpha back to back.
    """
    logfact = np.array([math.lgamma(i) for i in range(1, max(orders) + 2)])  # logfact[i] = log(i!)
    alpha = np.repeat(np.asarray(orders, dtype=np.int64), np.asarray(orders) + 1)
    starts = np.concatenate([[0], np.cumsum(np.asarray(orders) + 1)[:-1]])
    kk = np.arange(alpha.size) - np.repeat(starts, np.asarray(orders) + 1)
    log_binom = logfact[alpha] - logfact[kk] - logfact[alpha - kk]
    return log_binom, kk.astype(np.float64), (alpha - kk).astype(np.float64), starts


def _log_a(q: float, sigma: float, orders: np.ndarray) -> np.ndarray:
    """log A_alpha per order via a per-row log-sum-exp over the binomial terms."""
    log_binom, kk, rest, starts = _binomial_layout(tuple(int(o) for o in orders))
    terms = log_binom + rest * math.log1p(-q) + kk * (math.log(q) + (kk - 1) / (2.0 * sigma * sigma))
    top = np.maximum.reduceat(terms, starts)
    if not np.isfinite(top).all():
        raise NumericalOverflow(f"log-space RDP terms overflow for q={q}, sigma={sigma}")
    lengths = np.diff(np.append(starts, terms.size))
    return top + np.log(np.add.reduceat(np.exp(terms - np.repeat(top, lengths)), starts))


def _rdp_per_step(q: float, sigma: float, orders: Sequence[int]) -> np.ndarray:
    orders_arr = np.asarray(orders, dtype=np.int64)
    if orders_arr.size == 0 or orders_arr.min() < 2:
        raise InvalidConfig("orders must be integers >= 2")
    if not 0.0 <= q <= 1.0:
        raise InvalidConfig(f"sampling rate must lie in [0, 1], got {q}")
    if not sigma > 0:
        raise InvalidConfig(f"noise multiplier must be positive, got {sigma}")
    if q == 0.0 or math.isinf(sigma):
        return np.zeros(len(orders_arr))
    alphas = orders_arr.astype(np.float64)
    if q == 1.0:
        return alphas / (2.0 * sigma * sigma)
    rdp = _log_a(q, sigma, orders_arr) / (alphas - 1.0)
    if not np.isfinite(rdp).all():
        raise NumericalOverflow(f"RDP overflow for q={q}, sigma={sigma}")
    # A_alpha >= 1 mathematically; clip tiny negative rounding residue
    return np.maximum(rdp, 0.0)


def rdp_sgm(q: float, sigma: float, order: int) -> float:
    """Per-step RDP of the sampled Gaussian mechanism at one integer order."""
    if int(order) != order:
        raise InvalidConfig("only integer orders are supported")
    return float(_rdp_per_step(q, sigma, [int(order)])[0])


def compute_rdp(q: float, sigma: float, steps: int, orders: Sequence[int] = DEFAULT_ORDERS) -> RdpCurve:
    if steps < 0:
        raise InvalidConfig("steps must be >= 0")
    per_step = _rdp_per_step(q, sigma, orders)
    return RdpCurve(tuple(int(o) for o in orders), steps * per_step, steps)


def rdp_to_epsilon(curve: RdpCurve, delta: float) -> tuple[float, int]:
    if not 0.0 < delta < 1.0:
        raise InvalidConfig(f"delta must lie in (0, 1), got {delta}")
    alphas = np.asarray(curve.orders, dtype=np.float64)
    eps = curve.rdp_values + math.log(1.0 / delta) / (alphas - 1.0)
    best = int(np.argmin(eps))
    return float(eps[best]), curve.orders[best]


def epsilon_for_steps(
    q: float, sigma: float, steps: int, delta: float = DEFAULT_DELTA, orders: Sequence[int] = DEFAULT_ORDERS
) -> PrivacySpent:
    """(epsilon, delta) after ``steps`` applications at sampling rate ``q``."""
    if sigma == 0:
        return PrivacySpent(math.inf, delta, math.nan, steps, q)
    curve = compute_rdp(q, sigma, steps, orders)
    eps, order = rdp_to_epsilon(curve, delta)
    return PrivacySpent(eps, delta, order, steps, q)


def compute_epsilon(
    n: int,
    batch_size: int,
    epochs: int,
    noise_multiplier: float,
    delta: float = DEFAULT_DELTA,
    orders: Sequence[int] = DEFAULT_ORDERS,
) -> PrivacySpent:
    """Privacy estimate for DP-SGD before any training takes place.

    Shuffled fixed-size minibatches are accounted as Poisson sampling with
    rate ``batch_size / n`` over ``epochs * ceil(n / batch_size)`` steps.
    """
    if not (n >= batch_size >= 1):
        raise InvalidConfig(f"need n >= batch_size >= 1, got n={n}, batch_size={batch_size}")
    if epochs < 1:
        raise InvalidConfig("epochs must be >= 1")
    if not noise_multiplier > 0:
        raise InvalidConfig("noise_multiplier must be positive for a finite epsilon")
    if delta >= 1.0 / n:
        warnings.warn(f"delta={delta} is not below 1/n={1.0 / n:.3g}", stacklevel=2)
    q = batch_size / n
    steps = epochs * math.ceil(n / batch_size)
    return epsilon_for_steps(q, noise_multiplier, steps, delta, orders)
