"""
quantizers/softvq.py
Soft vector quantization: a temperature-weighted average of all codes while
training, hard selection at inference.
"""

from __future__ import annotations

import math

from ..core.errors import ContractError, NumericError
from ..core.functional import embedding
from ..core.tensor import Tensor, argmax_onehot, matmul, scale, softmax
from ..losses import DEFAULT_BETA, entropy_penalty, vq_commit_loss
from .base import QuantOut, QuantizerKind, check_features
from .codebook import Codebook
from .ibq import code_logits

TAU_START = 0.9
TAU_END = 1e-6


def softvq_temperature(step: int, total_steps: int, tau_start: float = TAU_START,
                       tau_end: float = TAU_END) -> float:
    """Cosine decay from tau_start at step 0 to tau_end at total_steps."""
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise ContractError(f"temperature schedule needs 0 <= step <= total_steps, got {step}/{total_steps}")
    return tau_end + 0.5 * (tau_start - tau_end) * (1.0 + math.cos(math.pi * step / total_steps))


def softvq_quantize(z: Tensor, codebook: Codebook, tau: float, training: bool = True,
                    beta: float = DEFAULT_BETA) -> QuantOut:
    """Quantize with softmax(z . C^T / tau) weights, or pick the argmax row when not training.

    Raises:
        NumericError: If tau is not positive.
    """
    if not tau > 0:
        raise NumericError(f"soft VQ temperature must be positive, got {tau}")
    check_features(z, codebook.dim, "softvq_quantize")
    logits = scale(code_logits(z, codebook), 1.0 / tau)
    soft = softmax(logits, axis=-1)
    indices, _ = argmax_onehot(logits)
    z_hard = embedding(codebook.embeddings, indices)
    out = QuantOut(
        z_q=matmul(soft, codebook.embeddings) if training else z_hard,
        indices=indices,
        kind=QuantizerKind.SOFTVQ,
        soft=soft,
        z_hard=z_hard,
        hard_inference=not training,
    )
    out.quant_loss = vq_commit_loss(z, out, beta)
    out.entropy_loss, out.entropy_parts = entropy_penalty(soft)
    return out
