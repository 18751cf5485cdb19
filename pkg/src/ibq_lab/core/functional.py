"""
core/functional.py
Fused network operations with hand-written adjoints: 2-D convolution, group
normalization, nearest-neighbour upsampling, row gathers, dropout and the
token cross-entropy.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError
from .rng import Rng
from .tensor import Tensor, from_op, mul


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an N x C x H x W batch with an O x C x k x k kernel."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} does not match kernel {weight.shape}")
    n, _, h, w = x.shape
    _, cin, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)

    def adjoint(g):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, weight.data, axes=([1], [0]))  # n, ho, wo, cin, kh, kw
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                    cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return from_op(out, inputs, adjoint, "conv2d")


def group_norm(x: Tensor, gain: Tensor, bias: Tensor, groups: int, eps: float = 1e-6) -> Tensor:
    """Normalize each group of channels of every sample, then apply a per-channel affine map."""
    n, c, h, w = x.shape
    if c % groups:
        raise DimensionError(f"group_norm: {c} channels not divisible into {groups} groups")
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(xg.var(axis=2, keepdims=True) + eps)
    xhat = ((xg - mu) * inv_std).reshape(n, c, h, w)
    out = xhat * gain.data.reshape(1, c, 1, 1) + bias.data.reshape(1, c, 1, 1)
    m = xg.shape[2]

    def adjoint(g):
        ggain = (g * xhat).sum(axis=(0, 2, 3))
        gbias = g.sum(axis=(0, 2, 3))
        dxhat = (g * gain.data.reshape(1, c, 1, 1)).reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        gx = inv_std / m * (m * dxhat - dxhat.sum(axis=2, keepdims=True)
                            - xh * (dxhat * xh).sum(axis=2, keepdims=True))
        return gx.reshape(n, c, h, w), ggain, gbias

    return from_op(out, (x, gain, bias), adjoint, "group_norm")


def upsample_nearest2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return from_op(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),), "upsample")


def embedding(weight: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a V x D table; the adjoint scatters back onto the gathered rows only."""
    indices = np.asarray(indices, dtype=np.int64)
    vocab = weight.shape[0]
    if indices.size and (indices.min() < 0 or indices.max() >= vocab):
        raise ContractError(f"embedding: index out of range [0, {vocab})")

    def adjoint(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, indices.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)
    return from_op(weight.data[indices], (weight,), adjoint, "embedding")


def dropout(x: Tensor, rate: float, rng: Optional[Rng], training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an Rng")
    keep = (rng.uniform_array(x.shape) >= rate).astype(x.data.dtype) / x.data.dtype.type(1.0 - rate)
    return mul(x, Tensor._wrap(keep))


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under row-wise softmax(logits)."""
    if logits.ndim != 2 or len(targets) != logits.shape[0]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs targets {np.shape(targets)}")
    targets = np.asarray(targets, dtype=np.int64)
    rows = np.arange(len(targets))
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    nll = -log_p[rows, targets].mean()

    def adjoint(g):
        grad = np.exp(log_p)
        grad[rows, targets] -= 1.0
        return (grad * (g / len(targets)),)
    return from_op(np.asarray(nll, dtype=logits.data.dtype), (logits,), adjoint, "cross_entropy")
