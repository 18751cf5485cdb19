"""
quantizers
Codebooks, the QuantOut contract and the five quantization schemes.
"""

from .base import QuantOut, QuantizerKind, nearest_codes, straight_through_index
from .codebook import Codebook, CodebookInit, LfqCodebook
from .factory import QuantizerSettings, build_codebook, quantize
from .ibq import code_logits, ibq_quantize
from .lfq import lfq_quantize
from .softvq import softvq_quantize, softvq_temperature
from .vq import naive_vq_quantize, vqgan_quantize

__all__ = [
    "Codebook", "CodebookInit", "LfqCodebook", "QuantOut", "QuantizerKind", "QuantizerSettings",
    "build_codebook", "code_logits", "ibq_quantize", "lfq_quantize", "naive_vq_quantize",
    "nearest_codes", "quantize", "softvq_quantize", "softvq_temperature", "straight_through_index",
    "vqgan_quantize",
]
