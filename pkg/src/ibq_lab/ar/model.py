"""
ar/model.py
This module defines the class-conditional causal transformer over token
indices: RMSNorm, rotary position embeddings, causal attention, SwiGLU and
AdaLN modulation driven by the class embedding.

The class embedding plays two parts. It is the start token of every sequence,
so the logits at position t predict token t from the class and tokens
0..t-1, and it is the condition every AdaLN projection reads. The AdaLN
projections start at zero, so a freshly built block is the identity map.
"""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import ConfigError, DataError, DimensionError
from ..core.functional import cross_entropy, dropout
from ..core.nn import Embedding, Linear, Module, parameter
from ..core.rng import Rng, Stream
from ..core.tensor import (Tensor, add, concat, from_op, getitem, matmul, mul, reshape, scale, silu,
                           transpose)
from .config import ARConfig

ROPE_BASE = 10000.0
NORM_EPS = 1e-6

Modulation = Tuple[Tensor, Tensor, Tensor, Tensor, Tensor, Tensor]


def rmsnorm(x: Tensor, gain: Tensor, eps: float = NORM_EPS) -> Tensor:
    """x / sqrt(mean(x^2) + eps) * gain over the last axis."""
    if gain.shape != (x.shape[-1],):
        raise DimensionError(f"rmsnorm: gain {gain.shape} does not match features of {x.shape}")
    r = 1.0 / np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + eps)
    xhat = x.data * r
    width = x.shape[-1]

    def adjoint(g):
        a = g * gain.data
        gx = r * (a - xhat * (a * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).reshape(-1, width).sum(axis=0)
    return from_op(xhat * gain.data, (x, gain), adjoint, "rmsnorm")


def _rope_angles(positions: np.ndarray, head_dim: int, dtype: np.dtype, base: float):
    theta = base ** (-2.0 * np.arange(head_dim // 2) / head_dim)
    angle = np.asarray(positions, dtype=np.float64)[:, None] * theta[None, :]
    return np.cos(angle).astype(dtype), np.sin(angle).astype(dtype)


def rope_apply(x: Tensor, positions: Sequence[int], base: float = ROPE_BASE) -> Tensor:
    """Rotate interleaved feature pairs (2i, 2i+1) of ... x T x d_head by position * base^(-2i/d_head).

    Raises:
        ConfigError: If d_head is odd.
        DimensionError: If there is not one position per row.
    """
    head_dim = x.shape[-1]
    if head_dim % 2:
        raise ConfigError(f"rotary embeddings need an even head size, got {head_dim}")
    positions = np.asarray(positions)
    if x.ndim < 2 or positions.shape != (x.shape[-2],):
        raise DimensionError(f"rope_apply: {positions.shape} positions for input {x.shape}")
    cos, sin = _rope_angles(positions, head_dim, x.data.dtype, base)
    even, odd = x.data[..., 0::2], x.data[..., 1::2]
    out = np.empty_like(x.data)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos

    def adjoint(g):
        ge, go = g[..., 0::2], g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = go * cos - ge * sin
        return (gx,)
    return from_op(out, (x,), adjoint, "rope")


def causal_softmax(scores: Tensor) -> Tensor:
    """Softmax over keys where query i sees keys 0..i only; masked weights are exactly zero."""
    t_q, t_k = scores.shape[-2:]
    hidden = np.triu(np.ones((t_q, t_k), dtype=bool), k=1)
    masked = np.where(hidden, -np.inf, scores.data)
    e = np.exp(masked - masked.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    return from_op(p, (scores,), lambda g: (p * (g - (g * p).sum(axis=-1, keepdims=True)),), "causal_softmax")


def adaln_modulate(x: Tensor, shift: Tensor, scale_: Tensor) -> Tensor:
    """x * (1 + scale) + shift; zero shift and scale leave x unchanged."""
    return add(mul(x, add(scale_, 1.0)), shift)


class RMSNorm(Module):
    def __init__(self, width: int, eps: float = NORM_EPS):
        self.gain = parameter(np.ones(width))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return rmsnorm(x, self.gain, self.eps)


class Attention(Module):
    """Multi-head causal self-attention with rotary queries and keys."""

    def __init__(self, rng: Rng, cfg: ARConfig):
        self.qkv = Linear(rng, cfg.width, 3 * cfg.width, bias=False)
        self.proj = Linear(rng, cfg.width, cfg.width, bias=False)
        self.heads = cfg.heads
        self.head_dim = cfg.head_dim

    def forward(self, x: Tensor, positions: np.ndarray) -> Tensor:
        b, t, w = x.shape
        qkv = transpose(reshape(self.qkv(x), (b, t, 3, self.heads, self.head_dim)), (2, 0, 3, 1, 4))
        q = rope_apply(getitem(qkv, 0), positions)
        k = rope_apply(getitem(qkv, 1), positions)
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        out = matmul(causal_softmax(scores), getitem(qkv, 2))
        return self.proj(reshape(transpose(out, (0, 2, 1, 3)), (b, t, w)))


class SwiGLU(Module):
    def __init__(self, rng: Rng, width: int, hidden: int):
        self.w1 = Linear(rng, width, hidden, bias=False)
        self.w3 = Linear(rng, width, hidden, bias=False)
        self.w2 = Linear(rng, hidden, width, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        return self.w2(mul(silu(self.w1(x)), self.w3(x)))


def split_modulation(projected: Tensor, parts: int) -> List[Tensor]:
    """B x (parts * w) -> parts tensors of shape B x 1 x w."""
    b, total = projected.shape
    chunks = reshape(projected, (b, 1, parts, total // parts))
    return [getitem(chunks, (slice(None), slice(None), i)) for i in range(parts)]


class Block(Module):
    """Pre-norm transformer block with AdaLN shift, scale and gate on both branches."""

    def __init__(self, rng: Rng, cfg: ARConfig):
        self.norm1 = RMSNorm(cfg.width)
        self.attn = Attention(rng, cfg)
        self.norm2 = RMSNorm(cfg.width)
        self.ffn = SwiGLU(rng, cfg.width, cfg.ffn_hidden)
        self.ada = Linear(rng, cfg.width, 6 * cfg.width, zero=True)
        self.dropout = cfg.dropout

    def modulation(self, cond: Tensor) -> Modulation:
        return tuple(split_modulation(self.ada(silu(cond)), 6))

    def forward(self, x: Tensor, cond: Tensor, positions: np.ndarray, rng: Optional[Rng] = None) -> Tensor:
        return self.forward_modulated(x, self.modulation(cond), positions, rng)

    def forward_modulated(self, x: Tensor, mods: Modulation, positions: np.ndarray,
                          rng: Optional[Rng] = None) -> Tensor:
        shift_a, scale_a, gate_a, shift_f, scale_f, gate_f = mods
        h = add(x, mul(gate_a, self.attn(adaln_modulate(self.norm1(x), shift_a, scale_a), positions)))
        f = self.ffn(adaln_modulate(self.norm2(h), shift_f, scale_f))
        f = dropout(f, self.dropout, rng, self.training)
        return add(h, mul(gate_f, f))


class ARModel(Module):
    """Decoder-only transformer p(x_t | class, x_0..x_{t-1}).

    Attributes:
        config (ARConfig): Shape of the model.
    """

    def __init__(self, cfg: ARConfig, seed: int = 0):
        self.config = cfg
        rng = Rng(seed, Stream.INIT)
        self.tok_emb = Embedding(rng, cfg.vocab_size, cfg.width)
        self.cls_emb = Embedding(rng, cfg.num_classes, cfg.width)
        self.blocks: List[Block] = [Block(rng, cfg) for _ in range(cfg.depth)]
        self.final_norm = RMSNorm(cfg.width)
        self.final_ada = Linear(rng, cfg.width, 2 * cfg.width, zero=True)
        self.head = Linear(rng, cfg.width, cfg.vocab_size, bias=False, std=0.02)

    def _check(self, prefix: np.ndarray, labels: np.ndarray):
        cfg = self.config
        if prefix.ndim != 2 or len(labels) != len(prefix):
            raise DimensionError(f"expected B x L tokens and B labels, got {prefix.shape} and {labels.shape}")
        if prefix.shape[1] >= cfg.seq_len + 1:
            raise DimensionError(f"prefix of {prefix.shape[1]} tokens exceeds sequence length {cfg.seq_len}")
        if prefix.size and (prefix.min() < 0 or prefix.max() >= cfg.vocab_size):
            raise DataError(f"token index outside [0, {cfg.vocab_size})")
        if labels.size and (labels.min() < 0 or labels.max() >= cfg.num_classes):
            raise DataError(f"class label outside [0, {cfg.num_classes})")

    def forward(self, prefix, labels, rng: Optional[Rng] = None, conditioned: bool = True) -> Tensor:
        """Logits for positions 0..L given B x L prefix tokens; returns B x (L+1) x K.

        With conditioned=False the AdaLN projections see a zero condition, so
        only their biases modulate; the class still enters as the start token.
        """
        prefix = np.asarray(prefix, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        self._check(prefix, labels)
        b, length = prefix.shape
        w = self.config.width
        cond = self.cls_emb(labels)
        x = reshape(cond, (b, 1, w))
        if length:
            x = concat([x, self.tok_emb(prefix)], axis=1)
        x = dropout(x, self.config.dropout, rng, self.training)
        cond = dropout(cond, self.config.dropout, rng, self.training)
        if not conditioned:
            cond = Tensor._wrap(np.zeros_like(cond.data))
        positions = np.arange(length + 1)
        for block in self.blocks:
            x = block(x, cond, positions, rng)
        shift, scale_ = split_modulation(self.final_ada(silu(cond)), 2)
        return self.head(adaln_modulate(self.final_norm(x), shift, scale_))


def ar_forward(model: ARModel, tokens, labels, rng: Optional[Rng] = None) -> Tuple[Tensor, Tensor]:
    """Parallel next-token pass over full ground-truth sequences.

    Returns:
        tuple: (B x T x K logits, mean next-token negative log-likelihood).

    Raises:
        DimensionError: If the sequences are not T tokens long.
        DataError: On an out-of-range token or label.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    cfg = model.config
    if tokens.ndim != 2 or tokens.shape[1] != cfg.seq_len:
        raise DimensionError(f"expected B x {cfg.seq_len} tokens, got {tokens.shape}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise DataError(f"token index outside [0, {cfg.vocab_size})")
    logits = model(tokens[:, :-1], labels, rng)
    b, t = tokens.shape
    nll = cross_entropy(reshape(logits, (b * t, cfg.vocab_size)), tokens.reshape(-1))
    return logits, nll
