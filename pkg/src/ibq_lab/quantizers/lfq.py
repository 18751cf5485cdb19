"""
quantizers/lfq.py
Lookup-free quantization: every latent dimension is binarized to +-1.
"""

from __future__ import annotations

import numpy as np

from ..core.tensor import Tensor, matmul, scale, softmax, straight_through
from ..losses import DEFAULT_BETA, entropy_penalty, vq_commit_loss
from .base import QuantOut, QuantizerKind, check_features
from .codebook import LfqCodebook


def lfq_quantize(z: Tensor, codebook: LfqCodebook, beta: float = DEFAULT_BETA) -> QuantOut:
    """Quantize B x d features to the sign code, index = sum_i bit_i * 2**i.

    Zero maps to -1. The soft distribution over all 2**d codes uses
    -|z - c|^2 logits; since |c|^2 = d for every code this equals the softmax
    of 2 z.c, which is what is computed.
    """
    check_features(z, codebook.dim, "lfq_quantize")
    dtype = z.data.dtype
    bits = (z.data > 0).astype(np.int64)
    q = Tensor._wrap((2 * bits - 1).astype(dtype))
    indices = (bits << np.arange(codebook.dim, dtype=np.int64)).sum(axis=1)

    codes = Tensor._wrap(codebook.codes(dtype).T.copy())
    soft = softmax(scale(matmul(z, codes), 2.0), axis=-1)
    out = QuantOut(z_q=straight_through(q, z), indices=indices, kind=QuantizerKind.LFQ,
                   soft=soft, z_hard=q)
    out.quant_loss = vq_commit_loss(z, out, beta)
    out.entropy_loss, out.entropy_parts = entropy_penalty(soft)
    return out
