"""
ar/config.py
Shape of the class-conditional autoregressive transformer, the depth scaling
rule, the named large-scale presets and the closed-form parameter count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict

from ..config import ARSection
from ..core.errors import ConfigError

FFN_MULTIPLE = 256
WIDTH_PER_LAYER = 64

PRESET_DEPTHS: Dict[str, int] = {
    "IBQ-B": 16,
    "IBQ-L": 20,
    "IBQ-XL": 24,
    "IBQ-XXL": 30,
}
PRESET_VOCAB = 16384
PRESET_SEQ_LEN = 256
PRESET_CLASSES = 1000


@dataclass(frozen=True)
class ARConfig:
    """Transformer shape.

    Attributes:
        depth (int): Number of blocks.
        width (int): Model width w.
        heads (int): Attention heads; width / heads must be even.
        vocab_size (int): Token vocabulary K.
        seq_len (int): Tokens per sequence T.
        num_classes (int): Conditioning classes.
        dropout (float): Rate for the input embedding, FFN output and condition.
        ffn_multiple (int): SwiGLU hidden size is rounded up to a multiple of this.
    """
    depth: int
    width: int
    heads: int
    vocab_size: int
    seq_len: int
    num_classes: int
    dropout: float = 0.1
    ffn_multiple: int = FFN_MULTIPLE

    def __post_init__(self):
        if min(self.depth, self.width, self.heads, self.vocab_size, self.seq_len, self.num_classes) < 1:
            raise ConfigError(f"AR sizes must be positive: {self}")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} is not divisible by {self.heads} heads")
        if self.head_dim % 2:
            raise ConfigError(f"head size {self.head_dim} must be even for rotary embeddings")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def ffn_hidden(self) -> int:
        return ffn_hidden(self.width, self.ffn_multiple)


def ffn_hidden(width: int, multiple: int = FFN_MULTIPLE) -> int:
    """int(8w/3) rounded up to a multiple of `multiple`."""
    return multiple * math.ceil(int(8 * width / 3) / multiple)


def ar_scale_config(depth: int, vocab_size: int = PRESET_VOCAB, seq_len: int = PRESET_SEQ_LEN,
                    num_classes: int = PRESET_CLASSES, dropout: float = 0.1) -> ARConfig:
    """Width 64 * depth and one head per layer."""
    if depth < 1:
        raise ConfigError(f"depth must be at least 1, got {depth}")
    return ARConfig(depth=depth, width=WIDTH_PER_LAYER * depth, heads=depth, vocab_size=vocab_size,
                    seq_len=seq_len, num_classes=num_classes, dropout=dropout)


def preset(name: str) -> ARConfig:
    try:
        return ar_scale_config(PRESET_DEPTHS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_DEPTHS)}") from None


def ar_param_count(cfg: ARConfig) -> int:
    """Parameters of ARModel for a config, without building it.

    Per block: q, k, v and output projections (4w^2), SwiGLU (3 w hidden),
    two RMSNorm gains and the AdaLN projection to six modulation vectors
    (6w^2 + 6w). Outside the blocks: token embedding, class embedding, final
    RMSNorm gain, final AdaLN (2w^2 + 2w) and the untied output head.
    """
    w = cfg.width
    block = 4 * w * w + 3 * w * cfg.ffn_hidden + 2 * w + 6 * w * w + 6 * w
    fixed = cfg.vocab_size * w + cfg.num_classes * w + w + 2 * w * w + 2 * w + w * cfg.vocab_size
    return cfg.depth * block + fixed


def ar_config_from_section(section: ARSection, vocab_size: int, seq_len: int, num_classes: int) -> ARConfig:
    """Concrete shape for a run: explicit width / heads when given, the scaling rule otherwise.

    Raises:
        ConfigError: If ar.vocab_size is set and disagrees with the token data.
    """
    if section.vocab_size is not None and section.vocab_size != vocab_size:
        raise ConfigError(f"ar.vocab_size={section.vocab_size} but the token data has K={vocab_size}")
    cfg = ar_scale_config(section.depth, vocab_size, seq_len, num_classes, section.dropout)
    if section.width is not None or section.heads is not None:
        cfg = replace(cfg, width=section.width or cfg.width, heads=section.heads or cfg.heads)
    return cfg
