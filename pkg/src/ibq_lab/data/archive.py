"""
data/archive.py
Tensor archive: the checkpoint and array-dump format.

Layout (all integers little-endian):

    b"IBQA"  u32 version (1)  u32 entry count
    per entry:
        u32 name length, UTF-8 name,
        u32 rank, rank x u32 dims,
        u8 dtype tag (0 f32, 1 f64, 2 i64, 3 u8),
        product(dims) x itemsize payload bytes

Entries keep their insertion order, so saving what was loaded reproduces the
file byte for byte.
"""

from __future__ import annotations

import math
import os
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from ..core.errors import ArchiveError, DataError

MAGIC = b"IBQA"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}

PathLike = Union[str, Path]


def _tag(name: str, array: np.ndarray) -> int:
    for tag, dtype in _DTYPES.items():
        if array.dtype == dtype or array.dtype == dtype.newbyteorder("="):
            return tag
    raise ArchiveError(f"entry {name!r}: dtype {array.dtype} cannot be archived")


def archive_bytes(entries: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named arrays into archive bytes."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, value in entries.items():
        array = np.asarray(value)
        tag = _tag(name, array)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        parts.append(struct.pack("<B", tag))
        parts.append(np.ascontiguousarray(array, dtype=_DTYPES[tag]).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, count: int, what: str) -> bytes:
        if count < 0 or self.pos + count > len(self.data):
            raise ArchiveError(f"{self.source}: truncated archive while reading {what} at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def parse_archive(data: bytes, source: str = "<bytes>") -> Dict[str, np.ndarray]:
    """Parse archive bytes completely; nothing is returned unless the whole file is valid.

    Raises:
        ArchiveError: On a bad magic or version, truncation, an unknown dtype tag,
            a duplicate or non-UTF-8 name, or trailing bytes.
    """
    reader = _Reader(data, source)
    if reader.take(4, "magic") != MAGIC:
        raise ArchiveError(f"{source}: not a tensor archive (bad magic)")
    version = reader.u32("version")
    if version != VERSION:
        raise ArchiveError(f"{source}: unsupported archive version {version}")
    count = reader.u32("entry count")
    entries: Dict[str, np.ndarray] = {}
    for index in range(count):
        length = reader.u32(f"name length of entry {index}")
        try:
            name = reader.take(length, f"name of entry {index}").decode("utf-8")
        except UnicodeDecodeError:
            raise ArchiveError(f"{source}: entry {index} name is not valid UTF-8") from None
        if name in entries:
            raise ArchiveError(f"{source}: duplicate entry name {name!r}")
        rank = reader.u32(f"rank of {name!r}")
        dims = tuple(reader.u32(f"dims of {name!r}") for _ in range(rank))
        tag = reader.take(1, f"dtype of {name!r}")[0]
        if tag not in _DTYPES:
            raise ArchiveError(f"{source}: entry {name!r} has unknown dtype tag {tag}")
        dtype = _DTYPES[tag]
        size = math.prod(dims) * dtype.itemsize
        if size > len(data) - reader.pos:
            raise ArchiveError(f"{source}: entry {name!r} declares shape {dims}, "
                               f"only {len(data) - reader.pos} bytes remain")
        payload = reader.take(size, f"payload of {name!r}")
        entries[name] = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("=")).reshape(dims)
    if reader.pos != len(data):
        raise ArchiveError(f"{source}: {len(data) - reader.pos} trailing bytes after the last entry")
    return entries


def archive_save(path: PathLike, entries: Mapping[str, np.ndarray]) -> Path:
    """Write the archive through a temporary file and an atomic rename."""
    path = Path(path)
    data = archive_bytes(entries)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise DataError(f"cannot write archive {path}: {exc}") from exc
    return path


def archive_load(path: PathLike) -> Dict[str, np.ndarray]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read archive {path}: {exc}") from exc
    return parse_archive(data, str(path))


def text_entry(text: str) -> np.ndarray:
    """UTF-8 text as a u8 entry (used to embed the resolved config)."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def entry_text(array: np.ndarray) -> str:
    return np.asarray(array, dtype=np.uint8).tobytes().decode("utf-8")
