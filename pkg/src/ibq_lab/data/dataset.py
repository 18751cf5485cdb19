"""
data/dataset.py
In-memory image dataset with a seeded held-out split and deterministic batch order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Optional, Tuple

import numpy as np

from ..core.errors import ContractError, DataError
from ..core.rng import Rng, Stream


class DataSource(Enum):
    SYNTHETIC = "synthetic"
    FOLDER = "folder"


@dataclass
class ImageDataset:
    """N images in [-1, 1] with class labels.

    Attributes:
        images (np.ndarray): float32 N x 3 x H x W.
        labels (np.ndarray): int64 N class ids.
        num_classes (int): Number of classes.
        source (DataSource): Where the images came from.
    """
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    source: DataSource = DataSource.SYNTHETIC

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise DataError(f"images must be N x 3 x H x W, got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < -1.0 or self.images.max() > 1.0):
            raise DataError("pixel values must lie in [-1, 1]")

    def __len__(self):
        return len(self.images)

    @property
    def size(self) -> Tuple[int, int]:
        return self.images.shape[2], self.images.shape[3]

    def subset(self, order: np.ndarray) -> "ImageDataset":
        return ImageDataset(self.images[order], self.labels[order], self.num_classes, self.source)

    def check_divisible(self, downsample: int):
        h, w = self.size
        if h % downsample or w % downsample:
            raise DataError(f"image size {h}x{w} is not divisible by downsample ratio {downsample}")

    def split(self, seed: int, held_out: float = 0.1) -> Tuple["ImageDataset", "ImageDataset"]:
        """Seeded shuffle, then the first `held_out` fraction becomes the validation split."""
        if len(self) < 2:
            raise DataError("need at least two images to hold out a validation split")
        order = Rng(seed, Stream.SPLIT).permutation(len(self))
        n_val = min(len(self) - 1, max(1, int(round(held_out * len(self)))))
        return self.subset(np.sort(order[n_val:])), self.subset(np.sort(order[:n_val]))


def iterate_batches(n: int, batch_size: int, rng: Optional[Rng] = None) -> Iterator[np.ndarray]:
    """Index batches covering range(n) once; shuffled when an Rng is given, last batch may be short."""
    if batch_size < 1:
        raise ContractError(f"batch size must be positive, got {batch_size}")
    order = rng.permutation(n) if rng is not None else np.arange(n, dtype=np.int64)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def gather_batches(images: np.ndarray, order: Iterable[np.ndarray],
                   prefetch: bool = False) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """(indices, images[indices]) in `order`; with prefetch the next gather runs on a worker thread.

    Batch contents and order are the same either way.
    """
    if not prefetch:
        for idx in order:
            yield idx, images[idx]
        return
    with ThreadPoolExecutor(max_workers=1) as pool:
        pending = None
        for idx in order:
            upcoming = idx, pool.submit(images.__getitem__, idx)
            if pending is not None:
                yield pending[0], pending[1].result()
            pending = upcoming
        if pending is not None:
            yield pending[0], pending[1].result()
