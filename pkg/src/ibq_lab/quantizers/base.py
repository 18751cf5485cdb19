"""
quantizers/base.py
This module defines the result bundle every quantizer returns, the quantizer
kinds and the shared selection helpers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from ..core.errors import ContractError, DimensionError
from ..core.tensor import Tensor, straight_through
from ..losses import EntropyParts


# float64 elements per distance block in nearest_codes
NEAREST_CHUNK = 1 << 22


class QuantizerKind(Enum):
    """Quantization schemes supported by the tokenizer."""
    IBQ = "ibq"
    NAIVE = "naive"
    VQGAN = "vqgan"
    LFQ = "lfq"
    SOFTVQ = "softvq"

    @property
    def has_soft(self) -> bool:
        return self in (QuantizerKind.IBQ, QuantizerKind.LFQ, QuantizerKind.SOFTVQ)

    @property
    def learnable_codebook(self) -> bool:
        return self is not QuantizerKind.LFQ


@dataclass
class QuantOut:
    """Everything one quantizer call produces.

    Attributes:
        z_q (Tensor): B x D quantized features fed to the decoder.
        indices (np.ndarray): B selected code indices (int64).
        kind (QuantizerKind): Which quantizer produced the bundle.
        soft (Tensor or None): B x K categorical distribution, when the scheme has one.
        z_hard (Tensor or None): B x D rows of the selected codes (gradient to selected rows only).
        quant_loss (Tensor or None): The scheme's quantization loss.
        entropy_loss (Tensor or None): Entropy penalty over soft.
        entropy_parts (EntropyParts or None): Per-sample and batch entropy values.
        hard_inference (bool): True when a soft scheme switched to hard selection.
    """
    z_q: Tensor
    indices: np.ndarray
    kind: QuantizerKind
    soft: Optional[Tensor] = None
    z_hard: Optional[Tensor] = None
    quant_loss: Optional[Tensor] = None
    entropy_loss: Optional[Tensor] = None
    entropy_parts: Optional[EntropyParts] = None
    hard_inference: bool = False


def check_features(z: Tensor, dim: int, what: str):
    if z.ndim != 2 or z.shape[1] != dim:
        raise DimensionError(f"{what}: features {z.shape} do not match code dimension {dim}")


def straight_through_index(hard: Tensor, soft: Tensor) -> Tensor:
    """hard - sg[soft] + soft: value of the one-hot index, gradient of the soft one.

    Raises:
        ContractError: If a row of hard is not one-hot.
    """
    if hard.shape != soft.shape:
        raise DimensionError(f"straight_through_index: {hard.shape} vs {soft.shape}")
    data = hard.data
    if not (((data == 0) | (data == 1)).all() and (data.sum(axis=-1) == 1).all()):
        raise ContractError("straight_through_index: hard rows must be one-hot")
    return straight_through(hard, soft)


def nearest_codes(z: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    """Index of the Euclidean-nearest code row for every feature; lowest index wins ties.

    Distances are |z - c|^2 taken directly in float64, a chunk of rows at a time.
    A feature equal to a code row has distance exactly 0 to it.
    """
    z = np.asarray(z, dtype=np.float64)
    codes = np.asarray(embeddings, dtype=np.float64)
    out = np.empty(len(z), dtype=np.int64)
    step = max(1, NEAREST_CHUNK // max(1, codes.size))
    for start in range(0, len(z), step):
        diff = z[start:start + step, None, :] - codes[None, :, :]
        out[start:start + step] = np.argmin(np.einsum("nkd,nkd->nk", diff, diff), axis=1)
    return out
