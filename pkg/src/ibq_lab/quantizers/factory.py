"""
quantizers/factory.py
Build the codebook a quantizer needs and dispatch a quantize call by kind.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from ..core.errors import ConfigError
from ..core.rng import Rng
from ..core.tensor import Tensor
from ..losses import DEFAULT_BETA
from .base import QuantOut, QuantizerKind
from .codebook import Codebook, CodebookInit, LfqCodebook
from .ibq import ibq_quantize
from .lfq import lfq_quantize
from .softvq import TAU_START, softvq_quantize
from .vq import naive_vq_quantize, vqgan_quantize

AnyCodebook = Union[Codebook, LfqCodebook]


def build_codebook(kind: QuantizerKind, rng: Rng, size: int, dim: int,
                   init: CodebookInit = CodebookInit.UNIFORM) -> AnyCodebook:
    """Create the codebook for a quantizer kind.

    Raises:
        ConfigError: If LFQ is asked for a size other than 2**dim.
    """
    if kind is QuantizerKind.LFQ:
        if size != 1 << dim:
            raise ConfigError(f"LFQ needs K == 2**D, got K={size}, D={dim}")
        return LfqCodebook(dim)
    return Codebook(rng, size, dim, init)


@dataclass
class QuantizerSettings:
    """Per-call knobs that are not part of the codebook."""
    beta: float = DEFAULT_BETA
    logit_scale: float = 1.0
    tau: float = TAU_START
    training: bool = True


def quantize(kind: QuantizerKind, z: Tensor, codebook: AnyCodebook,
             settings: Optional[QuantizerSettings] = None) -> QuantOut:
    settings = settings or QuantizerSettings()
    if kind is QuantizerKind.IBQ:
        return ibq_quantize(z, codebook, settings.beta, settings.logit_scale)
    if kind is QuantizerKind.NAIVE:
        return naive_vq_quantize(z, codebook, settings.beta)
    if kind is QuantizerKind.VQGAN:
        return vqgan_quantize(z, codebook, settings.beta)
    if kind is QuantizerKind.LFQ:
        return lfq_quantize(z, codebook, settings.beta)
    if kind is QuantizerKind.SOFTVQ:
        return softvq_quantize(z, codebook, settings.tau, settings.training, settings.beta)
    raise ConfigError(f"unknown quantizer kind {kind!r}")
