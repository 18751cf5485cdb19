"""
tokenizer/model.py
This module defines the stage-1 convolutional autoencoder and its quantizer.

Layer recipe, with C channels everywhere, L = log2(downsample) resampling
stages, R residual blocks and GroupNorm over gcd(C, 32) groups:

    encoder: conv3x3 3->C, L x (conv3x3 stride 2, SiLU), R x ResBlock,
             GroupNorm, SiLU, conv1x1 C->D
    decoder: conv1x1 D->C, R x ResBlock, L x (nearest 2x, conv3x3, SiLU),
             GroupNorm, SiLU, conv3x3 C->3, tanh
    ResBlock: x + conv3x3(SiLU(GN(conv3x3(SiLU(GN(x))))))

so the parameter counts are

    encoder = 28C + L(9C^2 + C) + R(18C^2 + 6C) + 2C + (CD + D)
    decoder = (DC + C) + R(18C^2 + 6C) + L(9C^2 + C) + 2C + (27C + 3)

plus K x D codebook entries (none for LFQ).
"""

from __future__ import annotations

import math
from typing import List, Optional, Tuple

import numpy as np

from ..config import TokenizerConfig
from ..core.errors import ConfigError, DimensionError
from ..core.functional import upsample_nearest2x
from ..core.nn import Conv2d, GroupNorm, Module
from ..core.rng import Rng, Stream
from ..core.tensor import Tensor, add, reshape, silu, tanh, transpose
from ..quantizers import LfqCodebook, QuantizerSettings, build_codebook, quantize


def norm_groups(channels: int) -> int:
    return math.gcd(channels, 32)


def resample_stages(downsample: int) -> int:
    if downsample < 1 or downsample & (downsample - 1):
        raise ConfigError(f"downsample ratio must be a power of two, got {downsample}")
    return downsample.bit_length() - 1


def tokenizer_param_count(cfg: TokenizerConfig) -> int:
    """Closed-form parameter count of TokenizerModel for a config."""
    c, d, r = cfg.channels, cfg.code_dim, cfg.num_resblocks
    stages = resample_stages(cfg.downsample)
    resblocks = r * (18 * c * c + 6 * c)
    resample = stages * (9 * c * c + c)
    encoder = 28 * c + resample + resblocks + 2 * c + (c * d + d)
    decoder = (d * c + c) + resblocks + resample + 2 * c + (27 * c + 3)
    codebook = cfg.codebook_size * d if cfg.quantizer.learnable_codebook else 0
    return encoder + decoder + codebook


class ResBlock(Module):
    def __init__(self, rng: Rng, channels: int):
        groups = norm_groups(channels)
        self.norm1 = GroupNorm(channels, groups)
        self.conv1 = Conv2d(rng, channels, channels, 3)
        self.norm2 = GroupNorm(channels, groups)
        self.conv2 = Conv2d(rng, channels, channels, 3)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv1(silu(self.norm1(x)))
        h = self.conv2(silu(self.norm2(h)))
        return add(x, h)


class Encoder(Module):
    def __init__(self, rng: Rng, cfg: TokenizerConfig):
        c = cfg.channels
        self.conv_in = Conv2d(rng, 3, c, 3)
        self.down: List[Conv2d] = [Conv2d(rng, c, c, 3, stride=2, padding=1)
                                   for _ in range(resample_stages(cfg.downsample))]
        self.blocks: List[ResBlock] = [ResBlock(rng, c) for _ in range(cfg.num_resblocks)]
        self.norm_out = GroupNorm(c, norm_groups(c))
        self.conv_out = Conv2d(rng, c, cfg.code_dim, 1)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv_in(x)
        for conv in self.down:
            h = silu(conv(h))
        for block in self.blocks:
            h = block(h)
        return self.conv_out(silu(self.norm_out(h)))


class Decoder(Module):
    def __init__(self, rng: Rng, cfg: TokenizerConfig):
        c = cfg.channels
        self.conv_in = Conv2d(rng, cfg.code_dim, c, 1)
        self.blocks: List[ResBlock] = [ResBlock(rng, c) for _ in range(cfg.num_resblocks)]
        self.up: List[Conv2d] = [Conv2d(rng, c, c, 3) for _ in range(resample_stages(cfg.downsample))]
        self.norm_out = GroupNorm(c, norm_groups(c))
        self.conv_out = Conv2d(rng, c, 3, 3)

    def forward(self, z: Tensor) -> Tensor:
        h = self.conv_in(z)
        for block in self.blocks:
            h = block(h)
        for conv in self.up:
            h = silu(conv(upsample_nearest2x(h)))
        return tanh(self.conv_out(silu(self.norm_out(h))))


class TokenizerModel(Module):
    """Encoder, codebook and decoder of the visual tokenizer.

    Attributes:
        config (TokenizerConfig): Architecture and quantizer settings.
        image_size (int): Side of the square input images.
    """

    def __init__(self, cfg: TokenizerConfig, image_size: int, seed: int):
        if image_size % cfg.downsample:
            raise ConfigError(f"image size {image_size} is not divisible by downsample ratio {cfg.downsample}")
        self.config = cfg
        self.image_size = image_size
        rng = Rng(seed, Stream.INIT)
        self.encoder = Encoder(rng, cfg)
        self.decoder = Decoder(rng, cfg)
        self.codebook = build_codebook(cfg.quantizer, rng, cfg.codebook_size, cfg.code_dim, cfg.codebook_init)

    @property
    def grid(self) -> Tuple[int, int]:
        side = self.image_size // self.config.downsample
        return side, side

    @property
    def seq_len(self) -> int:
        h, w = self.grid
        return h * w

    def settings(self, training: bool = True, tau: Optional[float] = None) -> QuantizerSettings:
        return QuantizerSettings(beta=self.config.beta, logit_scale=self.config.logit_scale,
                                 tau=self.config.tau_start if tau is None else tau, training=training)

    def forward(self, images: Tensor, settings: Optional[QuantizerSettings] = None):
        """encode -> quantize -> decode; returns (reconstruction, QuantOut, features)."""
        z = encode(self, images)
        out = quantize(self.config.quantizer, z, self.codebook, settings or self.settings())
        return decode(self, out.z_q), out, z


def encode(model: TokenizerModel, images: Tensor) -> Tensor:
    """Map B x 3 x H x W images to (B*h*w) x D feature rows in raster order.

    Raises:
        DimensionError: If the images do not have the model's size.
    """
    if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (model.image_size, model.image_size):
        raise DimensionError(f"encode: expected B x 3 x {model.image_size} x {model.image_size}, got {images.shape}")
    z = model.encoder(images)
    b, d, h, w = z.shape
    return reshape(transpose(z, (0, 2, 3, 1)), (b * h * w, d))


def decode(model: TokenizerModel, z_q: Tensor) -> Tensor:
    """Map (B*h*w) x D quantized rows back to B x 3 x H x W images in [-1, 1]."""
    h, w = model.grid
    d = model.config.code_dim
    if z_q.ndim != 2 or z_q.shape[1] != d or z_q.shape[0] % (h * w):
        raise DimensionError(f"decode: rows {z_q.shape} do not form {h}x{w} grids of dimension {d}")
    b = z_q.shape[0] // (h * w)
    return model.decoder(transpose(reshape(z_q, (b, h, w, d)), (0, 3, 1, 2)))


def code_rows(model: TokenizerModel, indices: np.ndarray) -> Tensor:
    """Code vectors for flat indices (LFQ codes rebuilt from their bits)."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    size = model.codebook.size
    if indices.size and (indices.min() < 0 or indices.max() >= size):
        raise DimensionError(f"token index outside [0, {size})")
    if isinstance(model.codebook, LfqCodebook):
        bits = (indices[:, None] >> np.arange(model.codebook.dim)) & 1
        return Tensor((2 * bits - 1).astype(np.float32))
    return Tensor._wrap(model.codebook.embeddings.data[indices])


def decode_tokens(model: TokenizerModel, tokens: np.ndarray) -> Tensor:
    """Decode N x T token grids (raster order) into N images."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] != model.seq_len:
        raise DimensionError(f"decode_tokens: expected N x {model.seq_len} tokens, got {tokens.shape}")
    return decode(model, code_rows(model, tokens))
