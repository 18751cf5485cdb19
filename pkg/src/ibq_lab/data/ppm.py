"""
data/ppm.py
Binary PPM (P6, maxval 255) reading and writing, and folder loading into an
ImageDataset.

Convert other formats beforehand, e.g. `pngtopnm in.png > out.ppm` (netpbm)
or `convert in.jpg out.ppm` (ImageMagick).
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from ..core.errors import DataError, PpmError
from .dataset import DataSource, ImageDataset

log = logging.getLogger(__name__)

PathLike = Union[str, Path]
_WHITESPACE = b" \t\n\r\x0b\x0c"


def _header_fields(data: bytes, path: PathLike) -> Tuple[List[bytes], int]:
    """Read magic, width, height and maxval; return them and the payload offset."""
    fields: List[bytes] = []
    pos = 0
    while len(fields) < 4:
        if pos >= len(data):
            raise PpmError(f"{path}: truncated PPM header")
        byte = data[pos:pos + 1]
        if byte == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise PpmError(f"{path}: unterminated comment in PPM header")
            pos = end + 1
        elif byte in _WHITESPACE:
            pos += 1
        else:
            start = pos
            while pos < len(data) and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b"#":
                pos += 1
            fields.append(data[start:pos])
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise PpmError(f"{path}: missing whitespace after PPM header")
    return fields, pos + 1


def decode_ppm(data: bytes, path: PathLike = "<bytes>") -> np.ndarray:
    """Decode P6 bytes into an H x W x 3 uint8 array.

    Raises:
        PpmError: If the header is malformed, maxval is not 255 or the pixels are truncated.
    """
    fields, offset = _header_fields(data, path)
    if fields[0] != b"P6":
        raise PpmError(f"{path}: not a binary PPM (magic {fields[0]!r}, expected b'P6')")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise PpmError(f"{path}: non-numeric PPM header field") from None
    if width < 1 or height < 1:
        raise PpmError(f"{path}: invalid image size {width}x{height}")
    if maxval != 255:
        raise PpmError(f"{path}: maxval {maxval} not supported, only 255")
    expected = width * height * 3
    payload = data[offset:offset + expected]
    if len(payload) != expected:
        raise PpmError(f"{path}: expected {expected} pixel bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def read_ppm(path: PathLike) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return decode_ppm(data, path)


def encode_ppm(image: np.ndarray) -> bytes:
    """Encode a 3 x H x W image in [-1, 1] as P6 bytes, pixel = round((x + 1) * 127.5)."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"expected a 3 x H x W image, got {image.shape}")
    pixels = np.clip(np.rint((np.asarray(image, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)
    _, h, w = image.shape
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.transpose(1, 2, 0).tobytes()


def write_ppm(path: PathLike, image: np.ndarray) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_ppm(image))
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    return path


def to_square(pixels: np.ndarray, size: int) -> np.ndarray:
    """Centre-crop H x W x 3 to a square, nearest-resize to size, map to [-1, 1] as 3 x size x size."""
    h, w, _ = pixels.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    idx = (np.arange(size) * side) // size
    square = pixels[top + idx][:, left + idx]
    return (square.astype(np.float32) / np.float32(127.5) - np.float32(1.0)).transpose(2, 0, 1)


def load_ppm_folder(path: PathLike, size: int) -> ImageDataset:
    """Load every *.ppm under path; each subfolder is a class, loose files are class 0.

    Raises:
        DataError: If the folder is missing or holds no images.
        PpmError: If a file fails to decode; the message names the file.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"image folder not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    groups = [(i, sorted(d.glob("*.ppm"))) for i, d in enumerate(class_dirs)]
    if not class_dirs:
        groups = [(0, sorted(root.glob("*.ppm")))]
    images, labels = [], []
    for label, files in groups:
        for file in files:
            images.append(to_square(read_ppm(file), size))
            labels.append(label)
    if not images:
        raise DataError(f"no .ppm images found under {root}")
    log.info("loaded %d images in %d classes from %s", len(images), max(1, len(class_dirs)), root)
    return ImageDataset(np.stack(images), np.asarray(labels, dtype=np.int64),
                        max(1, len(class_dirs)), DataSource.FOLDER)
