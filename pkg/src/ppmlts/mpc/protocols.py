"""Share-list API: each call runs one thread per party over a network."""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import PartyMismatch, TripleReuse
from .dealer import BeaverTriple, TrustedDealer
from .fixed_point import FixedPointCodec
from .party import Party
from .ring import as_ring
from .sharing import Share
from .transport import InProcessNetwork, Network


def run_parties(network: Network, dealer: TrustedDealer, fn: Callable[[Party], object], codec: FixedPointCodec | None = None) -> list:
    """Run ``fn(party)`` for every party concurrently; returns results in party order.

    The first exception raised by any party is re-raised in the caller.
    """
    if dealer.n_parties != network.n_parties:
        raise PartyMismatch("dealer and network disagree on the party count")
    results: list = [None] * network.n_parties
    errors: list = [None] * network.n_parties

    def body(pid: int):
        try:
            results[pid] = fn(Party(network.endpoint(pid), dealer.client(pid), codec))
        except BaseException as exc:  # noqa: BLE001 - re-raised below
            errors[pid] = exc

    threads = [threading.Thread(target=body, args=(p,), name=f"party-{p}") for p in range(network.n_parties)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for exc in errors:
        if exc is not None:
            raise exc
    return results


def _values(shares: Sequence[Share], n: int) -> list[np.ndarray]:
    if len(shares) != n or sorted(s.party_id for s in shares) != list(range(n)):
        raise PartyMismatch(f"expected one share per party 0..{n - 1}")
    return [as_ring(s.value) for s in sorted(shares, key=lambda s: s.party_id)]


def _wrap(values: list[np.ndarray], tag: str) -> list[Share]:
    n = len(values)
    return [Share(p, v[()] if v.ndim == 0 else v, tag, n) for p, v in enumerate(values)]


def _default_env(network, dealer, n):
    return network or InProcessNetwork(n), dealer or TrustedDealer(0, n)


def open_shares(x: Sequence[Share], network: Network, dealer: TrustedDealer | None = None) -> np.ndarray:
    vals = _values(x, network.n_parties)
    dealer = dealer or TrustedDealer(0, network.n_parties)
    return run_parties(network, dealer, lambda p: p.open(vals[p.pid]))[0]


def mul_shares(
    x: Sequence[Share], y: Sequence[Share], triple: BeaverTriple, network: Network, dealer: TrustedDealer | None = None
) -> list[Share]:
    """Beaver multiplication; reconstructs to ``x * y mod 2^64``.

    Fixed-point operands need a following :func:`truncate`.
    """
    n = network.n_parties
    xv, yv = _values(x, n), _values(y, n)
    triple.consume()  # raises TripleReuse on a second use
    views = [triple.for_party(p) for p in range(n)]
    dealer = dealer or TrustedDealer(0, n)
    return _wrap(run_parties(network, dealer, lambda p: p.mul(xv[p.pid], yv[p.pid], views[p.pid])), "mul")


def truncate(x: Sequence[Share], network: Network, dealer: TrustedDealer, codec: FixedPointCodec | None = None) -> list[Share]:
    """Exact ``floor(x / 2^f)`` on shares with dealer-issued masks."""
    xv = _values(x, network.n_parties)
    return _wrap(run_parties(network, dealer, lambda p: p.truncate(xv[p.pid]), codec), "trunc")


def relu_shares(x: Sequence[Share], network: Network, dealer: TrustedDealer) -> list[Share]:
    xv = _values(x, network.n_parties)
    return _wrap(run_parties(network, dealer, lambda p: p.relu(xv[p.pid])), "relu")


def maxpool_shares(x: Sequence[Share], kernel: int, stride: int, network: Network, dealer: TrustedDealer) -> list[Share]:
    """Max-pool along the last axis of shared arrays."""
    xv = _values(x, network.n_parties)
    return _wrap(run_parties(network, dealer, lambda p: p.maxpool(xv[p.pid], kernel, stride)), "maxpool")


__all__ = ["TripleReuse", "maxpool_shares", "mul_shares", "open_shares", "relu_shares", "run_parties", "truncate"]
