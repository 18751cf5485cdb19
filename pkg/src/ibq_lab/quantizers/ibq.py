"""
quantizers/ibq.py
Index backpropagation quantization.

The hard one-hot index is replaced, in the backward pass only, by the softmax
over the code logits. The quantized feature is that index times the codebook,
so in value it is exactly the selected row while every row of the codebook
receives a gradient through the softmax.
"""

from __future__ import annotations

from ..core.tensor import Tensor, argmax_onehot, matmul, scale, softmax, transpose
from ..core.functional import embedding
from ..losses import DEFAULT_BETA, double_quant_loss, entropy_penalty
from .base import QuantOut, QuantizerKind, check_features, straight_through_index
from .codebook import Codebook


def code_logits(z: Tensor, codebook: Codebook, logit_scale: float = 1.0) -> Tensor:
    """Dot products z . C^T, optionally scaled."""
    logits = matmul(z, transpose(codebook.embeddings, (1, 0)))
    return logits if logit_scale == 1.0 else scale(logits, logit_scale)


def ibq_quantize(z: Tensor, codebook: Codebook, beta: float = DEFAULT_BETA,
                 logit_scale: float = 1.0) -> QuantOut:
    """Quantize B x D features with index backpropagation.

    Args:
        z: Encoder features, one row per spatial position.
        codebook: The learnable codebook.
        beta: Commitment weight of the double quantization loss.
        logit_scale: Multiplier on the logits before the softmax.

    Returns:
        QuantOut: z_q, indices, soft distribution, hard rows and losses.

    Raises:
        DimensionError: If z does not have the codebook's dimension.
        NumericError: If the logits are not finite.
    """
    check_features(z, codebook.dim, "ibq_quantize")
    logits = code_logits(z, codebook, logit_scale)
    soft = softmax(logits, axis=-1)
    # argmax on the logits: same index as on soft, without rounding ties
    indices, hard = argmax_onehot(logits)
    index = straight_through_index(hard, soft)
    out = QuantOut(
        z_q=matmul(index, codebook.embeddings),
        indices=indices,
        kind=QuantizerKind.IBQ,
        soft=soft,
        z_hard=embedding(codebook.embeddings, indices),
    )
    out.quant_loss = double_quant_loss(z, out, beta)
    out.entropy_loss, out.entropy_parts = entropy_penalty(soft)
    return out
