"""
ar/sample.py
Class-conditional sampling, one token at a time in raster order, and decoding
of sampled grids through a tokenizer.
"""

from __future__ import annotations

import logging
from typing import Optional, Sequence, Union

import numpy as np

from ..core.errors import ConfigError, ContractError
from ..core.rng import Rng, Stream
from ..core.tensor import no_grad
from ..tokenizer.model import TokenizerModel, decode_tokens
from .model import ARModel

log = logging.getLogger(__name__)


def _draw(logits: np.ndarray, temperature: float, top_k: int, rng: Rng) -> np.ndarray:
    """One index per row from softmax(logits / temperature) restricted to the top_k logits."""
    scaled = logits.astype(np.float64) / temperature
    if top_k < scaled.shape[1]:
        keep = np.argsort(-scaled, axis=1, kind="stable")[:, :top_k]
        restricted = np.full_like(scaled, -np.inf)
        np.put_along_axis(restricted, keep, np.take_along_axis(scaled, keep, axis=1), axis=1)
        scaled = restricted
    p = np.exp(scaled - scaled.max(axis=1, keepdims=True))
    cdf = np.cumsum(p, axis=1)
    u = rng.uniform_array(len(scaled)) * cdf[:, -1]
    picked = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(picked, scaled.shape[1] - 1).astype(np.int64)


def ar_sample(model: ARModel, labels: Union[int, Sequence[int]], temperature: float = 1.0,
              top_k: Optional[int] = None, rng: Optional[Rng] = None, seed: int = 0) -> np.ndarray:
    """Sample N x T token grids for the given class labels.

    Args:
        model: Trained transformer.
        labels: One class id or one per sequence.
        temperature: Softmax temperature, > 0.
        top_k: Sample among the k largest logits; None or 0 means all K.
        rng: Source of randomness, default the SAMPLE stream of `seed`.
        seed: Used only when rng is None.

    Raises:
        ContractError: If temperature or top_k is out of range.
    """
    vocab = model.config.vocab_size
    k = top_k or vocab
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    if not 1 <= k <= vocab:
        raise ContractError(f"top_k must lie in [1, {vocab}], got {top_k}")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    rng = rng if rng is not None else Rng(seed, Stream.SAMPLE)
    tokens = np.zeros((len(labels), 0), dtype=np.int64)
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for _ in range(model.config.seq_len):
                logits = model(tokens, labels).data[:, -1, :]
                tokens = np.concatenate([tokens, _draw(logits, temperature, k, rng)[:, None]], axis=1)
    finally:
        model.train(was_training)
    return tokens


def check_pipeline(tokenizer: TokenizerModel, model: ARModel):
    """The transformer must speak the tokenizer's vocabulary and grid.

    Raises:
        ConfigError: Naming both sides of a mismatch.
    """
    cfg = model.config
    if tokenizer.codebook.size != cfg.vocab_size:
        raise ConfigError(f"tokenizer has K={tokenizer.codebook.size} codes, AR model K={cfg.vocab_size}")
    if tokenizer.seq_len != cfg.seq_len:
        raise ConfigError(f"tokenizer grids have {tokenizer.seq_len} tokens, AR model T={cfg.seq_len}")


def sample_images(tokenizer: TokenizerModel, model: ARModel, labels: Union[int, Sequence[int]],
                  temperature: float = 1.0, top_k: Optional[int] = None, seed: int = 0) -> np.ndarray:
    """Sample token grids and decode them into N x 3 x H x W images in [-1, 1]."""
    check_pipeline(tokenizer, model)
    tokens = ar_sample(model, labels, temperature, top_k, seed=seed)
    with no_grad():
        images = decode_tokens(tokenizer, tokens).data
    log.info("sampled %d images (temperature %.3g, top_k %s)", len(images), temperature, top_k or "all")
    return images
