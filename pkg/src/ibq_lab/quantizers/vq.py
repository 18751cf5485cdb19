"""
quantizers/vq.py
Nearest-neighbour vector quantization, with and without the straight-through
estimator.
"""

from __future__ import annotations

from ..core.functional import embedding
from ..core.tensor import Tensor, detach, straight_through
from ..losses import DEFAULT_BETA, vq_commit_loss
from .base import QuantOut, QuantizerKind, check_features, nearest_codes
from .codebook import Codebook


def naive_vq_quantize(z: Tensor, codebook: Codebook, beta: float = DEFAULT_BETA) -> QuantOut:
    """Replace each feature by its nearest code, cutting the encoder off.

    z_q carries no gradient at all. The quantization loss is evaluated on
    sg[z], so only the selected codebook rows learn, through its codebook term.
    """
    check_features(z, codebook.dim, "naive_vq_quantize")
    indices = nearest_codes(z.data, codebook.embeddings.data)
    q = embedding(codebook.embeddings, indices)
    out = QuantOut(z_q=detach(q), indices=indices, kind=QuantizerKind.NAIVE, z_hard=q)
    out.quant_loss = vq_commit_loss(detach(z), out, beta)
    return out


def vqgan_quantize(z: Tensor, codebook: Codebook, beta: float = DEFAULT_BETA) -> QuantOut:
    """z_q = z + sg[q - z]: the nearest code in value, the identity for the encoder gradient.

    The codebook learns only through the quantization loss.
    """
    check_features(z, codebook.dim, "vqgan_quantize")
    indices = nearest_codes(z.data, codebook.embeddings.data)
    q = embedding(codebook.embeddings, indices)
    out = QuantOut(z_q=straight_through(detach(q), z), indices=indices, kind=QuantizerKind.VQGAN, z_hard=q)
    out.quant_loss = vq_commit_loss(z, out, beta)
    return out
