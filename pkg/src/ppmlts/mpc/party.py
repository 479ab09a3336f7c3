"""Per-party protocol engine.

All parties run the same sequence of calls on their own shares (SPMD); each
call that communicates takes the next message tag, so tags agree across
parties without coordination. Semi-honest model with a trusted dealer.
"""
from __future__ import annotations

import numpy as np

from ..errors import TransportError
from .dealer import ArithTriple, BinaryTriple, DealerClient
from .fixed_point import FixedPointCodec
from .ring import U64, as_ring, ring_matmul
from .transport import Endpoint

_ONE = U64(1)
_WIRE = np.dtype("<u8")  # little-endian on the wire; native on common hosts


class Party:
    def __init__(self, endpoint: Endpoint, dealer: DealerClient, codec: FixedPointCodec | None = None):
        self.endpoint = endpoint
        self.pid = endpoint.pid
        self.n = endpoint.n_parties
        self.dealer = dealer
        self.codec = codec or FixedPointCodec()
        self._tag = 0

    @property
    def leader(self) -> bool:
        return self.pid == 0

    def _public(self, value) -> np.ndarray:
        """This party's share of a public constant (held by party 0)."""
        value = as_ring(value)
        return value if self.leader else np.zeros_like(value)

    # -- communication ------------------------------------------------------
    def _exchange(self, arrays: list[np.ndarray], to: int | None = None) -> list[list[np.ndarray]] | None:
        """Send local arrays to every party (or only to ``to``) and collect theirs.

        Returns, per array, the list of all parties' values in party order;
        ``None`` for parties that only send.
        """
        self._tag += 1
        tag = self._tag
        arrays = [np.ascontiguousarray(as_ring(a)) for a in arrays]
        payload = b"".join(a.astype(_WIRE, copy=False).tobytes() for a in arrays)
        receivers = range(self.n) if to is None else [to]
        for dst in receivers:
            if dst != self.pid:
                self.endpoint.send(dst, tag, 0, payload)
        if to is not None and to != self.pid:
            return None
        gathered = [[None] * self.n for _ in arrays]
        for src in range(self.n):
            if src == self.pid:
                raw = payload
            else:
                raw = self.endpoint.recv(src, tag, 0)
                if len(raw) != len(payload):
                    raise TransportError(f"party {src} sent {len(raw)} bytes, expected {len(payload)}")
            offset = 0
            for i, a in enumerate(arrays):
                size = a.size * 8
                gathered[i][src] = np.frombuffer(raw, dtype=_WIRE, count=a.size, offset=offset).reshape(a.shape)
                offset += size
        return gathered

    def open(self, *xs: np.ndarray):
        """Reveal arithmetic shares to every party."""
        out = []
        for parts in self._exchange(list(xs)):
            total = parts[0].copy()
            for p in parts[1:]:
                total += p
            out.append(total)
        return out[0] if len(out) == 1 else out

    def open_xor(self, *xs: np.ndarray):
        out = []
        for parts in self._exchange(list(xs)):
            total = parts[0].copy()
            for p in parts[1:]:
                total ^= p
            out.append(total)
        return out[0] if len(out) == 1 else out

    def reveal_to(self, x: np.ndarray, party: int = 0) -> np.ndarray | None:
        """Open ``x`` to one party only; the others get ``None``."""
        parts = self._exchange([x], to=party)
        if parts is None:
            return None
        total = parts[0][0].copy()
        for p in parts[0][1:]:
            total += p
        return total

    # -- arithmetic ----------------------------------------------------------
    def mul(self, x: np.ndarray, y: np.ndarray, triple: ArithTriple | None = None) -> np.ndarray:
        """Beaver product of two shared arrays of equal shape (no rescaling)."""
        x, y = as_ring(x), as_ring(y)
        if x.shape != y.shape:
            x, y = np.broadcast_arrays(x, y)
        t = triple or self.dealer.triple(x.shape)
        t.consume()
        eps, delta = self.open(x - t.a, y - t.b)
        z = t.c + eps * t.b + delta * t.a
        if self.leader:
            z += eps * delta
        return z

    def matmul(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Shared ``x @ y`` for 2-D operands using a matrix triple."""
        m, k = x.shape
        n = y.shape[1]
        t = self.dealer.matmul_triple(m, k, n)
        t.consume()
        eps, delta = self.open(x - t.a, y - t.b)
        z = t.c + ring_matmul(eps, t.b) + ring_matmul(t.a, delta)
        if self.leader:
            z += ring_matmul(eps, delta)
        return z

    def mul_public(self, x: np.ndarray, c: float) -> np.ndarray:
        """``x * c`` for a public real ``c``, rescaled to f fractional bits."""
        return self.truncate(as_ring(x) * self.codec.encode(c))

    def truncate(self, x: np.ndarray) -> np.ndarray:
        """Exact signed ``floor(x / 2^f)`` for ``|x| < 2^62``."""
        f = self.codec.frac_bits
        x = as_ring(x)
        tp = self.dealer.truncation(x.shape, f)
        tp.consume()
        shifted = x + self._public(np.full(x.shape, 1 << 62, dtype=U64))
        z = self.open(shifted + tp.r)
        z_high = z >> U64(f)
        z_low = z & U64((1 << f) - 1)
        # beta = [z_low < r_low] = 1 - bit_f(z_low + (2^f - r_low))
        bit = self._add_public_bit(z_low, tp.v_bits, f)
        beta = self.b2a(bit ^ self._public(np.ones_like(bit)))
        # carry out of z = x' + r happens iff msb(r) = 1 and msb(z) = 0
        wrap = np.where((z >> U64(63)) == 0, tp.r_msb << U64(64 - f), U64(0))
        out = self._public(z_high) - tp.r_high - beta + wrap
        return out - self._public(np.full(x.shape, 1 << (62 - f), dtype=U64))

    def mul_fixed(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.truncate(self.mul(x, y))

    def matmul_fixed(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.truncate(self.matmul(x, y))

    # -- boolean circuits ----------------------------------------------------
    def and_(self, x: np.ndarray, y: np.ndarray, triple: BinaryTriple | None = None) -> np.ndarray:
        t = triple or self.dealer.binary_triple(x.shape)
        t.consume()
        e, d = self.open_xor(x ^ t.a, y ^ t.b)
        z = t.c ^ (e & t.b) ^ (d & t.a)
        if self.leader:
            z ^= e & d
        return z

    def _prefix_carries(self, g: np.ndarray, p: np.ndarray, nbits: int) -> np.ndarray:
        """Kogge-Stone prefix: bit i of the result is the carry out of bit i."""
        s = 1
        while s < nbits:
            if 2 * s >= nbits:  # last level: the propagate word is no longer needed
                return g ^ self.and_(p, g << U64(s))
            both = self.and_(np.stack([p, p]), np.stack([g << U64(s), p << U64(s)]))
            g, p = g ^ both[0], both[1]
            s *= 2
        return g

    def binary_add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """XOR shares of ``a + b mod 2^64`` from XOR shares of two words."""
        g = self.and_(a, b)
        p = a ^ b
        carries = self._prefix_carries(g, p, 64)
        return p ^ (carries << _ONE)

    def _add_public_bit(self, public: np.ndarray, shared: np.ndarray, bit: int) -> np.ndarray:
        """XOR share of bit ``bit`` of ``public + shared`` (shared given as XOR shares)."""
        g = public & shared
        p = shared ^ self._public(public)
        carries = self._prefix_carries(g, p, bit)
        return ((p >> U64(bit)) ^ (carries >> U64(bit - 1))) & _ONE

    def a2b(self, x: np.ndarray) -> np.ndarray:
        """Arithmetic shares to XOR shares of the same ring element."""
        x = as_ring(x)
        zero = np.zeros_like(x)
        acc = x if self.pid == 0 else zero
        for q in range(1, self.n):
            acc = self.binary_add(acc, x if self.pid == q else zero)
        return acc

    def msb(self, x: np.ndarray) -> np.ndarray:
        """XOR shares (in bit 0) of the sign bit of a shared value."""
        return (self.a2b(x) >> U64(63)) & _ONE

    def b2a(self, bits: np.ndarray) -> np.ndarray:
        """XOR-shared bits (in bit 0) to arithmetic shares of the same bits."""
        rb = self.dealer.random_bit(bits.shape)
        rb.consume()
        e = self.open_xor((bits ^ rb.xor) & _ONE) & _ONE
        # b = e xor rho = e + rho - 2 e rho
        return self._public(e) + rb.arith * (_ONE - (e << _ONE))

    # -- comparisons -----------------------------------------------------------
    def relu(self, x: np.ndarray, return_mask: bool = False):
        """Exact ``max(x, 0)``; optionally also the shared indicator ``[x >= 0]``."""
        x = as_ring(x)
        positive = self.b2a(self.msb(x) ^ self._public(np.ones(x.shape, dtype=U64)))
        out = self.mul(x, positive)
        return (out, positive) if return_mask else out

    def maximum(self, a: np.ndarray, b: np.ndarray, return_mask: bool = False):
        """Exact ``max(a, b) = b + relu(a - b)``; mask is the shared ``[a >= b]``."""
        r, mask = self.relu(a - b, return_mask=True)
        return (b + r, mask) if return_mask else b + r

    def maxpool(self, x: np.ndarray, kernel: int, stride: int, return_mask: bool = False):
        """Max-pool over the last axis; the mask is a shared one-hot over each window."""
        from numpy.lib.stride_tricks import sliding_window_view

        win = np.ascontiguousarray(sliding_window_view(as_ring(x), kernel, axis=-1)[..., ::stride, :])
        best = win[..., 0]
        mask = None
        if return_mask:
            mask = np.zeros(win.shape, dtype=U64)
            mask[..., 0] = self._public(np.ones(best.shape, dtype=U64))
        for j in range(1, kernel):
            best, keep = self.maximum(best, win[..., j], return_mask=True)
            if return_mask:
                prev = self.mul(mask[..., :j], np.repeat(keep[..., None], j, axis=-1))
                mask[..., :j] = prev
                mask[..., j] = self._public(np.ones(keep.shape, dtype=U64)) - keep
        return (best, mask) if return_mask else best
