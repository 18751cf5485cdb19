"""
data/synthetic.py
Procedural class-structured images for desk-scale experiments.

Class c gets a background colour at corner (c mod 8) of the cube [-0.6, 0.6]^3
and one of four foreground shapes (disc, square, horizontal stripes, vertical
stripes by c mod 4) painted in -0.5 times that colour. Per image, the colour is
jittered, the shape position and area (10-30%) vary, and a little pixel noise
is added.
"""

from __future__ import annotations

import numpy as np

from ..core.errors import ContractError
from ..core.rng import Rng, Stream
from .dataset import DataSource, ImageDataset

CORNER = 0.6
JITTER = 0.05
NOISE = 0.02
DEFAULT_CLASSES = 8


def _shape_mask(kind: int, size: int, area: float, cy: float, cx: float) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size] + 0.5
    if kind == 0:
        radius = size * np.sqrt(area / np.pi)
        return (y - cy) ** 2 + (x - cx) ** 2 <= radius * radius
    if kind == 1:
        half = size * np.sqrt(area) / 2.0
        return (np.abs(y - cy) <= half) & (np.abs(x - cx) <= half)
    period = max(4.0, size / 4.0)
    axis = y if kind == 2 else x
    phase = cy if kind == 2 else cx
    return np.mod(axis + phase, period) < area * period


def synth_generate(n: int, size: int, seed: int, num_classes: int = DEFAULT_CLASSES) -> ImageDataset:
    """Generate n images of size x size, labels cycling through the classes.

    Deterministic per seed.
    """
    if n < 1 or size < 1 or num_classes < 1:
        raise ContractError(f"synth_generate needs positive n, size and classes, got {n}, {size}, {num_classes}")
    rng = Rng(seed, Stream.DATA)
    labels = np.arange(n, dtype=np.int64) % num_classes
    jitter = rng.uniform_array((n, 3), -JITTER, JITTER)
    area = rng.uniform_array(n, 0.1, 0.3)
    centre = rng.uniform_array((n, 2), 0.25 * size, 0.75 * size)
    noise = rng.normal_array((n, 3, size, size), std=NOISE)

    images = np.empty((n, 3, size, size), dtype=np.float64)
    for i, label in enumerate(labels):
        corner = label % 8
        background = np.array([CORNER if corner >> bit & 1 else -CORNER for bit in range(3)]) + jitter[i]
        foreground = -0.5 * background
        mask = _shape_mask(int(label % 4), size, area[i], centre[i, 0], centre[i, 1])
        images[i] = np.where(mask[None], foreground[:, None, None], background[:, None, None])
    images = np.clip(images + noise, -1.0, 1.0).astype(np.float32)
    return ImageDataset(images, labels, num_classes, DataSource.SYNTHETIC)
