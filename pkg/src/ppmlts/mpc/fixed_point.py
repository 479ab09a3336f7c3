"""Fixed-point encoding of reals into Z_2^64."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import OutOfRange
from .ring import RING_BITS, U64, from_signed, to_signed


@dataclass(frozen=True)
class FixedPointCodec:
    frac_bits: int = 16
    ring_bits: int = RING_BITS

    def __post_init__(self):
        if self.ring_bits != RING_BITS:
            raise ValueError("only the 64-bit ring is supported")
        if not 0 <= self.frac_bits < self.ring_bits - 2:
            raise ValueError("frac_bits out of range")

    @property
    def scale(self) -> float:
        return float(1 << self.frac_bits)

    @property
    def bound(self) -> float:
        """Encoded reals must satisfy ``|x| < bound``."""
        return float(2 ** (self.ring_bits - self.frac_bits - 2))

    def encode(self, x):
        """``round(x * 2**f) mod 2**64``; scalars give a numpy uint64 scalar."""
        arr = np.asarray(x, dtype=np.float64)
        if not np.isfinite(arr).all() or (np.abs(arr) >= self.bound).any():
            raise OutOfRange(f"value outside the representable range (+/-{self.bound:g})")
        enc = from_signed(np.round(arr * self.scale).astype(np.int64))
        return enc[()] if enc.ndim == 0 else enc

    def decode(self, r):
        out = to_signed(np.asarray(r, dtype=U64)).astype(np.float64) / self.scale
        return out[()] if out.ndim == 0 else out
