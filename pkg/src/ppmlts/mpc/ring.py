"""Arithmetic in Z_2^64 on numpy uint64 arrays (wraparound is the modular reduction)."""
from __future__ import annotations

import numpy as np

RING_BITS = 64
U64 = np.uint64
LIMB_BITS = 16
_LIMB_MASK = U64((1 << LIMB_BITS) - 1)
_MAX_INNER = 1 << 20  # keeps every limb dot product below 2**53


def as_ring(x) -> np.ndarray:
    return np.asarray(x, dtype=U64)


def to_signed(x: np.ndarray) -> np.ndarray:
    return as_ring(x).view(np.int64)


def from_signed(x) -> np.ndarray:
    return np.asarray(x, dtype=np.int64).view(U64)


def neg(x: np.ndarray) -> np.ndarray:
    return (U64(0) - as_ring(x)).astype(U64)


def random_ring(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform ring elements straight from the generator's 64-bit output."""
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    return rng.bit_generator.random_raw(int(np.prod(shape, dtype=np.int64))).reshape(shape)


def _limbs(x: np.ndarray) -> list[np.ndarray]:
    return [((x >> U64(LIMB_BITS * i)) & _LIMB_MASK).astype(np.float64) for i in range(RING_BITS // LIMB_BITS)]


def _matmul_block(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    la, lb = _limbs(a), _limbs(b)
    n = len(la)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=U64)
    for i in range(n):
        # one BLAS call per left limb against the needed right limbs side by side
        width = n - i
        prod = la[i] @ np.concatenate(lb[:width], axis=1)
        prod = prod.astype(U64)
        for j in range(width):
            part = prod[:, j * b.shape[1] : (j + 1) * b.shape[1]]
            out += part << U64(LIMB_BITS * (i + j))
    return out


def ring_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact ``a @ b mod 2**64`` for 2-D uint64 matrices.

    Operands are split into 16-bit limbs so each partial product is an exact
    float64 matrix product; only limb pairs that land below bit 64 are formed.
    """
    a, b = as_ring(a), as_ring(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"ring_matmul shapes {a.shape} and {b.shape} do not align")
    k = a.shape[1]
    if k <= _MAX_INNER:
        return _matmul_block(a, b)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=U64)
    for s in range(0, k, _MAX_INNER):
        out += _matmul_block(a[:, s : s + _MAX_INNER], b[s : s + _MAX_INNER])
    return out
