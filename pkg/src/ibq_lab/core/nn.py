"""
core/nn.py
This module defines the Module base class and the parameterised layers shared
by the tokenizer and the autoregressive model.

A Module finds its parameters by walking its attributes in definition order:
Tensors with requires_grad, child Modules and lists of Modules. Parameter names
are dotted attribute paths, e.g. "encoder.blocks.0.conv1.weight".
"""

from __future__ import annotations

import math
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from .errors import DimensionError
from .functional import conv2d, embedding, group_norm
from .rng import Rng
from .tensor import DType, Tensor, matmul


class Module:
    """Base class for parameter collections with a forward method."""

    training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError("Subclasses must implement forward method.")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        """Yield (dotted name, parameter) pairs in definition order."""
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{name}.{i}.")

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None

    def state_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        return {f"{prefix}{name}": p.data for name, p in self.named_parameters()}

    def load_state_dict(self, entries: Mapping[str, np.ndarray], prefix: str = ""):
        """Copy arrays into the parameters.

        Raises:
            DimensionError: If an entry is missing or has the wrong shape.
        """
        for name, p in self.named_parameters():
            key = f"{prefix}{name}"
            if key not in entries:
                raise DimensionError(f"state entry {key!r} missing")
            value = np.asarray(entries[key])
            if value.shape != p.shape:
                raise DimensionError(f"state entry {key!r} has shape {value.shape}, expected {p.shape}")
            p.data = np.array(value, dtype=p.data.dtype)


def parameter(values: np.ndarray, dtype: DType = DType.F32, name: Optional[str] = None) -> Tensor:
    return Tensor(values, dtype=dtype, requires_grad=True, name=name)


class Linear(Module):
    """y = x W + b with W stored in x out layout."""

    def __init__(self, rng: Rng, in_features: int, out_features: int, bias: bool = True,
                 std: Optional[float] = None, zero: bool = False):
        if zero:
            w = np.zeros((in_features, out_features))
        elif std is not None:
            w = rng.normal_array((in_features, out_features), std=std)
        else:
            bound = 1.0 / math.sqrt(in_features)
            w = rng.uniform_array((in_features, out_features), -bound, bound)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    """Square-kernel convolution, uniform(+-1/sqrt(fan_in)) initialisation."""

    def __init__(self, rng: Rng, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: Optional[int] = None):
        fan_in = in_channels * kernel_size * kernel_size
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = parameter(rng.uniform_array((out_channels, in_channels, kernel_size, kernel_size),
                                                  -bound, bound))
        self.bias = parameter(rng.uniform_array(out_channels, -bound, bound))
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int, eps: float = 1e-6):
        if channels % groups:
            raise DimensionError(f"{channels} channels not divisible into {groups} groups")
        self.gain = parameter(np.ones(channels))
        self.bias = parameter(np.zeros(channels))
        self.groups = groups
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return group_norm(x, self.gain, self.bias, self.groups, self.eps)


class Embedding(Module):
    def __init__(self, rng: Rng, num_embeddings: int, dim: int, std: float = 0.02):
        self.weight = parameter(rng.normal_array((num_embeddings, dim), std=std))

    def forward(self, indices: np.ndarray) -> Tensor:
        return embedding(self.weight, indices)
