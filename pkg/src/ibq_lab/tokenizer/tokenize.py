"""
tokenizer/tokenize.py
Turn an image dataset into a token dataset with a trained tokenizer.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..core.errors import ConfigError
from ..core.tensor import Tensor, no_grad
from ..data.dataset import ImageDataset, gather_batches, iterate_batches
from ..data.tokens import TokenDataset, write_tokens
from .model import TokenizerModel

log = logging.getLogger(__name__)


def tokenize_images(model: TokenizerModel, dataset: ImageDataset, batch: int = 64,
                    prefetch: bool = False) -> TokenDataset:
    """Encode and quantize every image to seq_len indices in raster order.

    Soft VQ tokenizers use their hard (inference) selection.

    Raises:
        ConfigError: If the images do not have the tokenizer's size.
    """
    if dataset.size != (model.image_size, model.image_size):
        raise ConfigError(f"dataset images are {dataset.size[0]}x{dataset.size[1]}, "
                          f"tokenizer expects {model.image_size}x{model.image_size}")
    settings = model.settings(training=False)
    tokens = np.empty((len(dataset), model.seq_len), dtype=np.int64)
    with no_grad():
        for idx, images in gather_batches(dataset.images, iterate_batches(len(dataset), batch), prefetch):
            _, out, _ = model(Tensor(images), settings)
            tokens[idx] = out.indices.reshape(len(idx), model.seq_len)
    return TokenDataset(tokens, dataset.labels.copy(), model.codebook.size, dataset.num_classes)


def tokenize_dataset(model: TokenizerModel, dataset: ImageDataset, out_path: Union[str, Path],
                     batch: Optional[int] = None, prefetch: bool = False) -> TokenDataset:
    """Tokenize a dataset and write the token file."""
    tokens = tokenize_images(model, dataset, batch or 64, prefetch)
    path = write_tokens(out_path, tokens)
    log.info("wrote %d sequences of %d tokens (K=%d) to %s", len(tokens), tokens.seq_len, tokens.vocab_size, path)
    return tokens
