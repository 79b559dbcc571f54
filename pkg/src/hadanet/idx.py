"""Reader/writer for the big-endian IDX image and label files.

Images: magic 0x00000803, then n/rows/cols as >u4, then n*rows*cols u8
pixels. Labels: magic 0x00000801, then n as >u4, then n u8 labels.
Gzipped files are detected by their two-byte signature and decompressed
transparently.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "IdxError",
    "IdxMagicError",
    "IdxTruncatedError",
    "IdxCountMismatchError",
    "read_idx_images",
    "read_idx_labels",
    "write_idx_images",
    "write_idx_labels",
    "load_idx",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    """Base class for malformed IDX input."""


class IdxMagicError(IdxError):
    """File does not start with the expected magic number."""


class IdxTruncatedError(IdxError):
    """File is shorter than its header promises."""


class IdxCountMismatchError(IdxError):
    """Image and label files disagree on the record count."""


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _check_magic(data: bytes, want: int, path) -> None:
    if len(data) < 4:
        raise IdxTruncatedError(f"{path}: file too short for a magic number")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != want:
        raise IdxMagicError(
            f"{path}: expected magic 0x{want:08x}, got 0x{magic:08x}"
        )


def _unpack_header(data: bytes, count: int, path) -> tuple[int, ...]:
    size = 4 * count
    if len(data) < size:
        raise IdxTruncatedError(f"{path}: header truncated ({len(data)} bytes)")
    return struct.unpack(f">{count}I", data[:size])


def read_idx_images(path) -> np.ndarray:
    """Read an IDX image file as a (n, rows, cols) uint8 array."""
    data = _read_bytes(path)
    _check_magic(data, IMAGES_MAGIC, path)
    _, n, rows, cols = _unpack_header(data, 4, path)
    need = 16 + n * rows * cols
    if len(data) < need:
        raise IdxTruncatedError(f"{path}: need {need} bytes, file has {len(data)}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=n * rows * cols, offset=16)
    return pixels.reshape(n, rows, cols).copy()


def read_idx_labels(path) -> np.ndarray:
    """Read an IDX label file as a (n,) uint8 array."""
    data = _read_bytes(path)
    _check_magic(data, LABELS_MAGIC, path)
    _, n = _unpack_header(data, 2, path)
    if len(data) < 8 + n:
        raise IdxTruncatedError(f"{path}: need {8 + n} bytes, file has {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=8).copy()


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError(f"images must be (n, rows, cols), got {images.shape}")
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">4I", IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    if labels.ndim != 1:
        raise ValueError(f"labels must be 1-D, got {labels.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2I", LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def _per_class_subset(labels: np.ndarray, per_class: int) -> np.ndarray:
    keep = []
    seen: dict[int, int] = {}
    for i, lab in enumerate(labels):
        lab = int(lab)
        if seen.get(lab, 0) < per_class:
            seen[lab] = seen.get(lab, 0) + 1
            keep.append(i)
    return np.asarray(keep, dtype=np.int64)


def load_idx(images_path, labels_path, per_class: int | None = None):
    """Load an image/label pair as ((n, rows, cols, 1) float32 in [0, 1], (n,) int64).

    ``per_class`` keeps only the first that many examples of each class,
    in file order.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    if per_class is not None:
        idx = _per_class_subset(labels, per_class)
        images = images[idx]
        labels = labels[idx]
    x = (images.astype(np.float32) / 255.0)[..., None]
    return x, labels.astype(np.int64)
