"""Trusted dealer issuing correlated randomness.

Every party asks the dealer for material in the same order (the protocols
are SPMD), so the k-th request of each party refers to the same object.
Material for request k is drawn from ``default_rng([seed, k])`` and handed
out piecewise; the dealer never sees protocol data.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from ..errors import PartyMismatch, TripleReuse
from .ring import U64, as_ring, random_ring, ring_matmul
from .sharing import Share, share, xor_share


class _SingleUse:
    def consume(self) -> None:
        if getattr(self, "_used", False):
            raise TripleReuse(f"{type(self).__name__} was already consumed")
        self._used = True


@dataclass
class ArithTriple(_SingleUse):
    """One party's shares of (a, b, c). ``c = a * b`` or ``c = a @ b``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


@dataclass
class BinaryTriple(_SingleUse):
    """XOR shares of words (a, b, a & b)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


@dataclass
class TruncationPair(_SingleUse):
    """Shares of r, floor(r / 2^f), msb(r), plus XOR shares of 2^f - (r mod 2^f)."""

    r: np.ndarray
    r_high: np.ndarray
    r_msb: np.ndarray
    v_bits: np.ndarray


@dataclass
class RandomBit(_SingleUse):
    """The same random bit, XOR-shared and additively shared."""

    xor: np.ndarray
    arith: np.ndarray


@dataclass
class BeaverTriple(_SingleUse):
    """All parties' shares of an elementwise triple (global view)."""

    a: list[Share]
    b: list[Share]
    c: list[Share]

    def for_party(self, pid: int) -> ArithTriple:
        return ArithTriple(self.a[pid].value, self.b[pid].value, self.c[pid].value)


def _arith(value: np.ndarray, n: int, rng) -> list[np.ndarray]:
    return [as_ring(s.value) for s in share(value, n, rng)]


def _gen_triple(rng, n, shape):
    a, b = random_ring(rng, shape), random_ring(rng, shape)
    c = a * b
    return [ArithTriple(x, y, z) for x, y, z in zip(_arith(a, n, rng), _arith(b, n, rng), _arith(c, n, rng))]


def _gen_matmul_triple(rng, n, m, k, p):
    a, b = random_ring(rng, (m, k)), random_ring(rng, (k, p))
    c = ring_matmul(a, b)
    return [ArithTriple(x, y, z) for x, y, z in zip(_arith(a, n, rng), _arith(b, n, rng), _arith(c, n, rng))]


def _gen_binary_triple(rng, n, shape):
    a, b = random_ring(rng, shape), random_ring(rng, shape)
    parts = zip(xor_share(a, n, rng), xor_share(b, n, rng), xor_share(a & b, n, rng))
    return [BinaryTriple(x, y, z) for x, y, z in parts]


def _gen_truncation(rng, n, shape, frac_bits):
    r = random_ring(rng, shape)
    f = U64(frac_bits)
    low = r & U64((1 << frac_bits) - 1)
    v = U64(1 << frac_bits) - low
    parts = zip(_arith(r, n, rng), _arith(r >> f, n, rng), _arith(r >> U64(63), n, rng), xor_share(v, n, rng))
    return [TruncationPair(*p) for p in parts]


def _gen_bit(rng, n, shape):
    bit = rng.integers(0, 2, size=shape, dtype=U64)
    return [RandomBit(x, a) for x, a in zip(xor_share(bit, n, rng), _arith(bit, n, rng))]


_GENERATORS = {
    "triple": _gen_triple,
    "matmul": _gen_matmul_triple,
    "binary": _gen_binary_triple,
    "trunc": _gen_truncation,
    "bit": _gen_bit,
}


@dataclass
class _Pending:
    key: tuple
    pieces: list
    taken: int = 0


@dataclass
class TrustedDealer:
    seed: int = 0
    n_parties: int = 2
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _counters: dict = field(default_factory=dict, repr=False)
    _pending: dict = field(default_factory=dict, repr=False)
    _global_count: int = 0

    def request(self, pid: int, kind: str, *args):
        """Party ``pid``'s piece of its next piece of correlated randomness."""
        key = (kind, *args)
        with self._lock:
            idx = self._counters.get(pid, 0)
            self._counters[pid] = idx + 1
            entry = self._pending.get(idx)
            if entry is None:
                rng = np.random.default_rng([self.seed, idx])
                entry = _Pending(key, _GENERATORS[kind](rng, self.n_parties, *args))
                self._pending[idx] = entry
            elif entry.key != key:
                raise PartyMismatch(f"party {pid} asked for {key} but request {idx} is {entry.key}")
            entry.taken += 1
            if entry.taken == self.n_parties:
                del self._pending[idx]
            return entry.pieces[pid]

    def client(self, pid: int) -> "DealerClient":
        return DealerClient(self, pid)

    def beaver_triple(self, shape=()) -> BeaverTriple:
        """A complete elementwise triple for the global-list API (own stream)."""
        with self._lock:
            idx = self._global_count
            self._global_count += 1
        rng = np.random.default_rng([self.seed, 0xBEA7E4, idx])
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        pieces = _gen_triple(rng, self.n_parties, shape)
        mk = lambda name: [Share(p, getattr(t, name), "triple", self.n_parties) for p, t in enumerate(pieces)]
        return BeaverTriple(mk("a"), mk("b"), mk("c"))


@dataclass
class DealerClient:
    dealer: TrustedDealer
    pid: int

    def triple(self, shape) -> ArithTriple:
        return self.dealer.request(self.pid, "triple", tuple(shape))

    def matmul_triple(self, m: int, k: int, n: int) -> ArithTriple:
        return self.dealer.request(self.pid, "matmul", m, k, n)

    def binary_triple(self, shape) -> BinaryTriple:
        return self.dealer.request(self.pid, "binary", tuple(shape))

    def truncation(self, shape, frac_bits: int) -> TruncationPair:
        return self.dealer.request(self.pid, "trunc", tuple(shape), frac_bits)

    def random_bit(self, shape) -> RandomBit:
        return self.dealer.request(self.pid, "bit", tuple(shape))
