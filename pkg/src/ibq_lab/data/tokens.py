"""
data/tokens.py
Token dataset file: class-labelled index sequences produced by a tokenizer.

Layout (little-endian): b"IBQK", u32 K, u32 T, u32 num_classes, u32 N, then N
records of u16 class followed by T x u32 indices in raster order.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from ..core.errors import ArchiveError, DataError
from ..core.rng import Rng, Stream

MAGIC = b"IBQK"
_HEADER = struct.Struct("<4sIIII")

PathLike = Union[str, Path]


@dataclass
class TokenDataset:
    """N token sequences of length T over a vocabulary of K codes.

    Attributes:
        tokens (np.ndarray): int64 N x T indices, raster-scan order.
        labels (np.ndarray): int64 N class ids.
        vocab_size (int): K.
        num_classes (int): Number of classes.
    """
    tokens: np.ndarray
    labels: np.ndarray
    vocab_size: int
    num_classes: int

    def __post_init__(self):
        if self.tokens.ndim != 2 or len(self.labels) != len(self.tokens):
            raise DataError(f"token dataset shape mismatch: {self.tokens.shape} vs {len(self.labels)} labels")
        if self.tokens.size and (self.tokens.min() < 0 or self.tokens.max() >= self.vocab_size):
            raise DataError(f"token index outside [0, {self.vocab_size})")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"class label outside [0, {self.num_classes})")
        if self.num_classes > 0xFFFF:
            raise DataError(f"at most 65535 classes fit the record format, got {self.num_classes}")

    def __len__(self):
        return len(self.tokens)

    @property
    def seq_len(self) -> int:
        return self.tokens.shape[1]

    def subset(self, order: np.ndarray) -> "TokenDataset":
        return TokenDataset(self.tokens[order], self.labels[order], self.vocab_size, self.num_classes)

    def split(self, seed: int, held_out: float = 0.1) -> Tuple["TokenDataset", "TokenDataset"]:
        """Seeded (train, validation) split, same rule as ImageDataset.split."""
        if len(self) < 2:
            raise DataError("need at least two sequences to hold out a validation split")
        order = Rng(seed, Stream.SPLIT).permutation(len(self))
        n_val = min(len(self) - 1, max(1, int(round(held_out * len(self)))))
        return self.subset(np.sort(order[n_val:])), self.subset(np.sort(order[:n_val]))


def token_bytes(dataset: TokenDataset) -> bytes:
    n, t = dataset.tokens.shape
    record = np.dtype([("label", "<u2"), ("tokens", "<u4", (t,))])
    records = np.empty(n, dtype=record)
    records["label"] = dataset.labels
    records["tokens"] = dataset.tokens
    return _HEADER.pack(MAGIC, dataset.vocab_size, t, dataset.num_classes, n) + records.tobytes()


def parse_tokens(data: bytes, source: str = "<bytes>") -> TokenDataset:
    """Parse a token file completely.

    Raises:
        ArchiveError: On a bad magic, a length mismatch or an index >= K.
    """
    if len(data) < _HEADER.size:
        raise ArchiveError(f"{source}: truncated token file header")
    magic, vocab, t, classes, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ArchiveError(f"{source}: not a token file (bad magic)")
    expected = _HEADER.size + n * (2 + 4 * t)
    if len(data) != expected:
        raise ArchiveError(f"{source}: expected {expected} bytes for {n} records of length {t}, got {len(data)}")
    record = np.dtype([("label", "<u2"), ("tokens", "<u4", (t,))])
    records = np.frombuffer(data, dtype=record, offset=_HEADER.size, count=n)
    try:
        return TokenDataset(records["tokens"].astype(np.int64).reshape(n, t),
                            records["label"].astype(np.int64), vocab, classes)
    except DataError as exc:
        raise ArchiveError(f"{source}: {exc}") from None


def write_tokens(path: PathLike, dataset: TokenDataset) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(token_bytes(dataset))
        os.replace(tmp, path)
    except OSError as exc:
        raise DataError(f"cannot write token file {path}: {exc}") from exc
    return path


def read_tokens(path: PathLike) -> TokenDataset:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read token file {path}: {exc}") from exc
    return parse_tokens(data, str(path))
