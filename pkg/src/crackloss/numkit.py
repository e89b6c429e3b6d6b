"""Dense float64 tensor substrate: stable sigmoid primitives, shape-checked
elementwise/reduction helpers, and seeded randomness.

Tensors are plain C-contiguous ``numpy.float64`` arrays (row-major flat
storage). Reductions accumulate strictly left to right so repeated runs are
bit-identical; randomness comes from numpy's PCG64 so a fixed seed pins the
whole stream.
"""

from __future__ import annotations

import zlib

import numpy as np

Tensor = np.ndarray


def as_tensor(data) -> Tensor:
    """Coerce nested lists / arrays to a C-contiguous float64 array."""
    return np.ascontiguousarray(data, dtype=np.float64)


def from_flat(flat, shape) -> Tensor:
    """Build a tensor from row-major flat data; inverse of ``t.ravel()``."""
    arr = as_tensor(flat).ravel()
    n = int(np.prod(shape)) if len(shape) else 1
    if arr.size != n:
        raise ValueError(f"flat data has {arr.size} values, shape {tuple(shape)} needs {n}")
    return arr.reshape(shape)


def zeros(shape) -> Tensor:
    return np.zeros(shape, dtype=np.float64)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return a + b


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return a * b


def scale(t: Tensor, c: float) -> Tensor:
    return t * float(c)


def tsum(t: Tensor) -> float:
    """Sum with strict left-to-right accumulation over row-major order."""
    flat = np.ascontiguousarray(t, dtype=np.float64).ravel()
    if flat.size == 0:
        return 0.0
    # cumsum is a sequential scan in numpy, so the final prefix is the
    # left-to-right total
    return float(np.cumsum(flat)[-1])


def tmean(t: Tensor) -> float:
    if t.size == 0:
        raise ValueError("mean of empty tensor")
    return tsum(t) / t.size


def tmax(t: Tensor) -> float:
    if t.size == 0:
        raise ValueError("max of empty tensor")
    return float(np.max(t))


def clamp(t: Tensor, lo: float, hi: float) -> Tensor:
    return np.clip(t, lo, hi)


def sigmoid(z: Tensor) -> Tensor:
    """Elementwise logistic function, overflow-safe on the whole float range.

    Uses exp(z)/(1+exp(z)) for negative z and 1/(1+exp(-z)) otherwise, so the
    exponent argument is never positive.
    """
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_sigmoid(z: Tensor) -> Tensor:
    """Elementwise log(sigmoid(z)) = -softplus(-z), computed without
    underflowing to -inf; log(1 - sigmoid(z)) is log_sigmoid(-z)."""
    z = np.asarray(z, dtype=np.float64)
    return np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))


class SeededRng:
    """Deterministic random stream.

    Backed by numpy's ``Generator(PCG64(seed))``; the PCG64 bit generator is a
    fixed, documented algorithm, so one 64-bit seed pins the entire stream.
    ``child(key)`` derives independent substreams via SeedSequence spawn keys,
    also a pure function of (seed, key).
    """

    def __init__(self, seed: int, _seq: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._seq = np.random.SeedSequence(self.seed) if _seq is None else _seq
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def child(self, key: int | str) -> "SeededRng":
        """Independent substream of this stream, keyed by an integer or a
        name (names map to fixed integers via a CRC so streams stay stable
        across runs and processes)."""
        if isinstance(key, str):
            key = zlib.crc32(key.encode("utf-8"))
        seq = np.random.SeedSequence(entropy=self._seq.entropy,
                                     spawn_key=self._seq.spawn_key + (int(key),))
        rng = object.__new__(SeededRng)
        rng.seed = self.seed
        rng._seq = seq
        rng._gen = np.random.Generator(np.random.PCG64(seq))
        return rng

    def normal(self, shape, loc: float = 0.0, std: float = 1.0) -> Tensor:
        return self._gen.normal(loc, std, size=shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> Tensor:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int) -> int:
        """One integer drawn uniformly from [low, high)."""
        return int(self._gen.integers(low, high))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
