"""Additive secret sharing over Z_2^64."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import MissingShare, PartyMismatch
from .ring import U64, as_ring, random_ring


@dataclass
class Share:
    party_id: int
    value: np.ndarray  # uint64 scalar or array
    tag: str = ""
    n_parties: int = 2


def share(secret, n_parties: int = 2, rng: np.random.Generator | None = None, tag: str = "") -> list[Share]:
    """Split ``secret`` (ring element or uint64 array) into ``n_parties`` additive shares."""
    if n_parties < 2:
        raise ValueError("secret sharing needs at least two parties")
    rng = rng if rng is not None else np.random.default_rng()
    secret = as_ring(secret)
    parts = [random_ring(rng, secret.shape) for _ in range(n_parties - 1)]
    last = secret.copy()
    for p in parts:
        last = last - p
    parts.append(as_ring(last))
    return [Share(i, v[()] if v.ndim == 0 else v, tag, n_parties) for i, v in enumerate(parts)]


def _check_complete(shares: Sequence[Share]) -> None:
    if not shares:
        raise MissingShare("no shares given")
    n = shares[0].n_parties
    ids = sorted(s.party_id for s in shares)
    if any(s.n_parties != n for s in shares):
        raise PartyMismatch("shares disagree on the party count")
    if ids != list(range(n)):
        raise MissingShare(f"need one share from each of {n} parties, got ids {ids}")


def reconstruct(shares: Sequence[Share]):
    _check_complete(shares)
    total = as_ring(shares[0].value).copy()
    for s in shares[1:]:
        total = total + as_ring(s.value)
    total = as_ring(total)
    return total[()] if total.ndim == 0 else total


def add_shares(x: Sequence[Share], y: Sequence[Share]) -> list[Share]:
    """Local share-wise addition; no communication."""
    if sorted(s.party_id for s in x) != sorted(s.party_id for s in y) or len(x) != len(y):
        raise PartyMismatch("operands are shared among different party sets")
    by_party = {s.party_id: s for s in y}
    out = []
    for s in x:
        v = as_ring(as_ring(s.value) + as_ring(by_party[s.party_id].value))
        out.append(Share(s.party_id, v[()] if v.ndim == 0 else v, s.tag, s.n_parties))
    return out


def neg_shares(x: Sequence[Share]) -> list[Share]:
    out = []
    for s in x:
        v = as_ring(U64(0) - as_ring(s.value))
        out.append(Share(s.party_id, v[()] if v.ndim == 0 else v, s.tag, s.n_parties))
    return out


def xor_share(secret, n_parties: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Boolean sharing of a uint64 word array (XOR of the parts is the secret)."""
    secret = as_ring(secret)
    parts = [random_ring(rng, secret.shape) for _ in range(n_parties - 1)]
    last = secret.copy()
    for p in parts:
        last = last ^ p
    return parts + [last]
