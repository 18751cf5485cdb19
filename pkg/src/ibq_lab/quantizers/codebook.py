"""
quantizers/codebook.py
Learnable K x D codebook and the implicit binary codebook used by
lookup-free quantization.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from ..core.errors import ConfigError
from ..core.nn import Module, parameter
from ..core.rng import Rng

MAX_LFQ_DIM = 20


class CodebookInit(Enum):
    UNIFORM = "uniform"
    NORMAL = "normal"


class Codebook(Module):
    """K code embeddings of dimension D, learned by gradient descent only.

    Attributes:
        embeddings (Tensor): K x D parameter.
    """

    def __init__(self, rng: Rng, size: int, dim: int, init: CodebookInit = CodebookInit.UNIFORM):
        if size < 2:
            raise ConfigError(f"codebook size must be at least 2, got {size}")
        if dim < 1:
            raise ConfigError(f"code dimension must be at least 1, got {dim}")
        if init is CodebookInit.NORMAL:
            values = rng.normal_array((size, dim), std=0.02)
        else:
            values = rng.uniform_array((size, dim), -1.0 / size, 1.0 / size)
        self.embeddings = parameter(values, name="codebook")

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __repr__(self):
        return f"Codebook(K={self.size}, D={self.dim})"


class LfqCodebook(Module):
    """Implicit codebook {-1, +1}^dim with 2**dim entries and no parameters.

    Code k has value +1 in dimension i when bit i of k is set, -1 otherwise.
    """

    def __init__(self, dim: int):
        if dim < 1 or dim > MAX_LFQ_DIM:
            raise ConfigError(f"LFQ dimension must be in [1, {MAX_LFQ_DIM}], got {dim}")
        self.lfq_dim = dim

    @property
    def size(self) -> int:
        return 1 << self.lfq_dim

    @property
    def dim(self) -> int:
        return self.lfq_dim

    def codes(self, dtype=np.float32) -> np.ndarray:
        """All 2**dim codes as a K x dim matrix of +-1."""
        k = np.arange(self.size, dtype=np.int64)[:, None]
        bits = (k >> np.arange(self.lfq_dim, dtype=np.int64)) & 1
        return (2 * bits - 1).astype(dtype)

    def __repr__(self):
        return f"LfqCodebook(dim={self.lfq_dim}, K={self.size})"
