"""
metrics.py
Codebook health and reconstruction quality: usage, perplexity, PSNR, the
distance between codebook and feature distribution, and a CSV export of
embeddings for external projection tools.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .core.errors import ContractError, DataError, DimensionError, NumericError
from .core.tensor import Tensor

log = logging.getLogger(__name__)

ArrayOrTensor = Union[np.ndarray, Tensor]
PSNR_PEAK = 2.0


def _array(value: ArrayOrTensor) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value)


@dataclass
class UsageStats:
    """Code selection statistics of one evaluation pass.

    Attributes:
        counts (np.ndarray): K selection counts.
        usage (float): Fraction of codes selected at least once.
        perplexity (float): exp of the entropy of the empirical index distribution.
    """
    counts: np.ndarray
    usage: float
    perplexity: float

    @property
    def used(self) -> int:
        return int((self.counts > 0).sum())

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "UsageStats":
        total = counts.sum()
        if total == 0:
            raise ContractError("codebook usage needs at least one token")
        p = counts[counts > 0] / total
        entropy = float(-(p * np.log(p)).sum())
        return cls(counts=counts, usage=float((counts > 0).sum()) / len(counts),
                   perplexity=math.exp(entropy))


class UsageAccumulator:
    """Running selection counts over a pass; merging is associative and order-free."""

    def __init__(self, size: int):
        self.size = size
        self.counts = np.zeros(size, dtype=np.int64)

    def update(self, indices: np.ndarray):
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        if indices.size and (indices.min() < 0 or indices.max() >= self.size):
            raise ContractError(f"code index out of range [0, {self.size})")
        self.counts += np.bincount(indices, minlength=self.size)

    def merge(self, other: "UsageAccumulator") -> "UsageAccumulator":
        if other.size != self.size:
            raise DimensionError(f"cannot merge usage over {self.size} and {other.size} codes")
        merged = UsageAccumulator(self.size)
        merged.counts = self.counts + other.counts
        return merged

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def stats(self) -> UsageStats:
        return UsageStats.from_counts(self.counts.copy())


def codebook_usage(indices: Union[np.ndarray, Iterable[np.ndarray]], size: int) -> UsageStats:
    """Usage and perplexity of all indices of one evaluation pass.

    Raises:
        ContractError: If there are no indices or one is outside [0, size).
    """
    acc = UsageAccumulator(size)
    if isinstance(indices, np.ndarray):
        acc.update(indices)
    else:
        for batch in indices:
            acc.update(batch)
    return acc.stats()


def psnr(x_hat: ArrayOrTensor, x: ArrayOrTensor, peak: float = PSNR_PEAK) -> float:
    """10 log10(peak^2 / MSE) in dB for pixels in [-1, 1]; +inf when the images are identical."""
    a = _array(x_hat).astype(np.float64)
    b = _array(x).astype(np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def distribution_gap(codebook: ArrayOrTensor, features: ArrayOrTensor, chunk: int = 1 << 22) -> float:
    """Mean distance from each code to its nearest feature, over the mean feature norm.

    Raises:
        ContractError: If either set is empty.
        NumericError: If every feature is zero.
    """
    codes = _array(codebook).astype(np.float64)
    feats = _array(features).astype(np.float64)
    if codes.size == 0 or feats.size == 0:
        raise ContractError("distribution_gap needs a non-empty codebook and feature sample")
    if codes.shape[1] != feats.shape[1]:
        raise DimensionError(f"distribution_gap: codes {codes.shape} vs features {feats.shape}")
    norm = float(np.linalg.norm(feats, axis=1).mean())
    if norm == 0.0:
        raise NumericError("distribution_gap: features have zero mean norm")
    rows = max(1, chunk // (feats.shape[0] * feats.shape[1]))
    nearest = np.empty(len(codes))
    for start in range(0, len(codes), rows):
        block = codes[start:start + rows]
        diff = block[:, None, :] - feats[None, :, :]
        nearest[start:start + rows] = np.sqrt((diff * diff).sum(axis=2)).min(axis=1)
    return float(nearest.mean()) / norm


def export_embeddings_csv(codebook: ArrayOrTensor, features: ArrayOrTensor, path: Union[str, Path]) -> Path:
    """Write one row per code and per feature: source, d0, ..., d{D-1}.

    Raises:
        DataError: If the file cannot be written.
    """
    codes = _array(codebook)
    feats = _array(features)
    if codes.shape[1] != feats.shape[1]:
        raise DimensionError(f"export_embeddings_csv: codes {codes.shape} vs features {feats.shape}")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["source"] + [f"d{i}" for i in range(codes.shape[1])])
            for source, rows in (("code", codes), ("feature", feats)):
                for row in rows:
                    writer.writerow([source] + [f"{float(v):.9g}" for v in row])
    except OSError as exc:
        raise DataError(f"cannot write embeddings to {path}: {exc}") from exc
    log.info("wrote %d code and %d feature rows to %s", len(codes), len(feats), path)
    return path
