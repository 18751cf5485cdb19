"""
losses.py
Stage-1 training objective: reconstruction, quantization and entropy terms
and their weighted sum.

Every term is a mean over all of its elements so magnitudes do not depend on
the batch size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Dict, NamedTuple, Optional, Tuple

import numpy as np

from .core.errors import ContractError, DimensionError
from .core.tensor import Tensor, abs as abs_, add, detach, from_op, mean, scale, square, sub

if TYPE_CHECKING:
    from .quantizers.base import QuantOut

DEFAULT_BETA = 0.25
_TINY = 1e-30


class ReconKind(Enum):
    MSE = "mse"
    L1 = "l1"


def _mse(a: Tensor, b: Tensor) -> Tensor:
    return mean(square(sub(a, b)))


def reconstruction_loss(x_hat: Tensor, x: Tensor, kind: ReconKind = ReconKind.MSE) -> Tensor:
    """Mean squared (or absolute) pixel error.

    Raises:
        DimensionError: If the shapes differ.
    """
    if x_hat.shape != x.shape:
        raise DimensionError(f"reconstruction_loss: {x_hat.shape} vs {x.shape}")
    if kind is ReconKind.L1:
        return mean(abs_(sub(x_hat, x)))
    return _mse(x_hat, x)


def _require_hard(quant_out: "QuantOut", what: str) -> Tensor:
    if quant_out.z_hard is None:
        raise ContractError(f"{what} needs the hard-selected code rows; quantizer {quant_out.kind} gave none")
    return quant_out.z_hard


def double_quant_loss(z: Tensor, quant_out: "QuantOut", beta: float = DEFAULT_BETA) -> Tensor:
    """Pull features and codes together through both the soft and the hard path.

    mean|z_q - z|^2 + mean|sg[z] - z_hard|^2 + beta * mean|z - sg[z_hard]|^2

    z_q carries gradient to every codebook row through the soft index, z_hard
    only to the selected rows.
    """
    z_hard = _require_hard(quant_out, "double_quant_loss")
    if quant_out.z_q.shape != z.shape:
        raise DimensionError(f"double_quant_loss: z {z.shape} vs z_q {quant_out.z_q.shape}")
    loss = add(_mse(quant_out.z_q, z), _mse(detach(z), z_hard))
    return add(loss, scale(_mse(z, detach(z_hard)), beta))


def vq_commit_loss(z: Tensor, quant_out: "QuantOut", beta: float = DEFAULT_BETA) -> Tensor:
    """Codebook term plus commitment term: mean|sg[z] - q|^2 + beta * mean|z - sg[q]|^2."""
    q = _require_hard(quant_out, "vq_commit_loss")
    if q.shape != z.shape:
        raise DimensionError(f"vq_commit_loss: z {z.shape} vs q {q.shape}")
    return add(_mse(detach(z), q), scale(_mse(z, detach(q)), beta))


def _entropy_rows(p: Tensor) -> Tensor:
    """Shannon entropy (nats) of every row of p, with 0 log 0 = 0."""
    log_p = np.log(np.maximum(p.data, _TINY))
    out = -(p.data * log_p).sum(axis=-1)
    return from_op(out, (p,), lambda g: (-(log_p + 1.0) * np.expand_dims(g, -1),), "entropy")


class EntropyParts(NamedTuple):
    per_sample: float
    batch: float


def entropy_penalty(soft: Tensor, atol: float = 1e-4) -> Tuple[Tensor, EntropyParts]:
    """Mean per-sample entropy minus the entropy of the mean distribution.

    Minimising it makes single assignments confident while spreading the batch
    over the whole codebook. The value lies in [-ln K, ln K].

    Raises:
        ContractError: If a row does not sum to 1 within atol.
    """
    if soft.ndim != 2:
        raise DimensionError(f"entropy_penalty expects B x K probabilities, got {soft.shape}")
    row_sums = soft.data.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > atol:
        raise ContractError("entropy_penalty: rows are not normalized probability vectors")
    per_sample = mean(_entropy_rows(soft))
    batch = _entropy_rows(mean(soft, axis=0))
    return sub(per_sample, batch), EntropyParts(per_sample.item(), batch.item())


@dataclass
class LossWeights:
    recon: float = 1.0
    quant: float = 1.0
    entropy: float = 0.1

    def validate(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ContractError(f"loss weight {name} must be non-negative, got {value}")


@dataclass
class LossBundle:
    """The weighted training objective and its parts.

    Attributes:
        total (Tensor): Scalar the optimizer minimises.
        recon, quant, entropy (Tensor): The unweighted terms.
        weights (LossWeights): Coefficients used for total.
    """
    total: Tensor
    recon: Tensor
    quant: Tensor
    entropy: Tensor
    weights: LossWeights = field(default_factory=LossWeights)

    def values(self) -> Dict[str, float]:
        return {
            "loss_total": self.total.item(),
            "loss_recon": self.recon.item(),
            "loss_quant": self.quant.item(),
            "loss_entropy": self.entropy.item(),
        }


def assemble_loss(recon: Tensor, quant: Tensor, entropy: Optional[Tensor] = None,
                  weights: Optional[LossWeights] = None) -> LossBundle:
    """Weighted sum recon * w_r + quant * w_q + entropy * w_e.

    A missing entropy term counts as zero.
    """
    weights = weights or LossWeights()
    weights.validate()
    if entropy is None:
        entropy = Tensor(np.zeros((), dtype=recon.data.dtype))
    total = add(add(scale(recon, weights.recon), scale(quant, weights.quant)),
                scale(entropy, weights.entropy))
    return LossBundle(total=total, recon=recon, quant=quant, entropy=entropy, weights=weights)
