"""
core/rng.py
Deterministic random streams.

Every random draw in the lab comes from numpy's Philox4x64-10 counter-based
bit generator keyed by a 128-bit key built from (seed, stream):

    key = (stream << 64) | (seed mod 2**64)

Raw 64-bit outputs are turned into doubles as (u >> 11) * 2**-53, which lies in
[0, 1). Normals use the Box-Muller transform on pairs of such uniforms
(u1, u2): r = sqrt(-2 ln(1 - u1)), z0 = r cos(2 pi u2), z1 = r sin(2 pi u2),
emitted in the order z0, z1 for each pair. Shuffles are a stable argsort of a
uniform vector. Nothing depends on numpy's distribution algorithms, so the
same (seed, stream) gives the same values on every platform and numpy version,
and a port to another language only needs Philox4x64-10.
"""

from __future__ import annotations

from enum import IntEnum
from typing import Sequence, Tuple, Union

import numpy as np

from .tensor import DType, Tensor

MASK64 = (1 << 64) - 1
Shape = Union[int, Sequence[int]]


class Stream(IntEnum):
    """Stream ids of the independent random sequences one run draws from."""
    INIT = 0
    SPLIT = 1
    DATA = 2
    SHUFFLE = 3
    DROPOUT = 4
    SAMPLE = 5
    CHECK = 6


def _shape(shape: Shape) -> Tuple[int, ...]:
    return (shape,) if isinstance(shape, int) else tuple(shape)


class Rng:
    """A reproducible stream of random numbers.

    Attributes:
        seed (int): Unsigned 64-bit seed.
        stream (int): Stream id; distinct streams of one seed are independent.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & MASK64
        self.stream = int(stream) & MASK64
        self._bits = np.random.Philox(key=(self.stream << 64) | self.seed)

    def derive(self, stream: int) -> "Rng":
        """Return a fresh generator for another stream of the same seed."""
        return Rng(self.seed, stream)

    def at(self, kind: Stream, counter: int) -> "Rng":
        """Generator for one epoch or step: stream (kind << 32) | counter."""
        return Rng(self.seed, (int(kind) << 32) | (int(counter) & 0xFFFFFFFF))

    def raw(self, count: int) -> np.ndarray:
        return np.asarray(self._bits.random_raw(count), dtype=np.uint64)

    def uniform_array(self, shape: Shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = _shape(shape)
        count = int(np.prod(shape)) if shape else 1
        u = (self.raw(count) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return (low + (high - low) * u).reshape(shape)

    def normal_array(self, shape: Shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        shape = _shape(shape)
        count = int(np.prod(shape)) if shape else 1
        pairs = (count + 1) // 2
        u = self.uniform_array(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).reshape(-1)[:count]
        return (mean + std * z).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform_array(n), kind="stable").astype(np.int64)

    def integers(self, high: int, count: int) -> np.ndarray:
        return np.minimum((self.uniform_array(count) * high).astype(np.int64), high - 1)

    def uniform(self, shape: Shape, low: float = 0.0, high: float = 1.0,
                dtype: DType = DType.F32, requires_grad: bool = False) -> Tensor:
        return Tensor(self.uniform_array(shape, low, high), dtype=dtype, requires_grad=requires_grad)

    def normal(self, shape: Shape, mean: float = 0.0, std: float = 1.0,
               dtype: DType = DType.F32, requires_grad: bool = False) -> Tensor:
        return Tensor(self.normal_array(shape, mean, std), dtype=dtype, requires_grad=requires_grad)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"


def rng_uniform(rng: Rng, shape: Shape, low: float = 0.0, high: float = 1.0,
                dtype: DType = DType.F32) -> Tensor:
    """Uniform tensor on [low, high) drawn from `rng`."""
    return rng.uniform(shape, low, high, dtype)


def rng_normal(rng: Rng, shape: Shape, mean: float = 0.0, std: float = 1.0,
               dtype: DType = DType.F32) -> Tensor:
    """Normal tensor drawn from `rng` via Box-Muller."""
    return rng.normal(shape, mean, std, dtype)
