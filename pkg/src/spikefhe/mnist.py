"""MNIST ingestion from the canonical IDX files.

The four files (train/t10k x images/labels) are big-endian IDX: a magic
word, one size word per dimension, then raw unsigned bytes.  Readers
here validate the magic, the dimension sizes and the payload length,
and name the byte offset of whatever disagrees, so a truncated or
mislabeled file produces a diagnosis instead of a numpy shape error
three calls later.

File paths are user-supplied: a directory argument, or the
SPIKEFHE_DATA_DIR environment variable as the default.  Nothing here
downloads anything.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DATA_DIR_ENV = "SPIKEFHE_DATA_DIR"

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class DatasetError(Exception):
    """Missing, truncated or malformed dataset input."""


def _read_words(path: Path, count: int) -> tuple[int, ...]:
    with open(path, "rb") as fh:
        head = fh.read(4 * count)
    if len(head) < 4 * count:
        raise DatasetError(
            f"{path}: header truncated at byte {len(head)}, "
            f"need {4 * count} bytes"
        )
    return struct.unpack(f">{count}I", head)


def read_idx_images(path: str | Path) -> np.ndarray:
    """Images file -> uint8 array of shape (count, rows, cols)."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    magic, count, rows, cols = _read_words(path, 4)
    if magic != IMAGE_MAGIC:
        raise DatasetError(
            f"{path}: bad magic 0x{magic:08x} at byte 0, "
            f"expected 0x{IMAGE_MAGIC:08x} (idx3 images)"
        )
    expected = 16 + count * rows * cols
    actual = path.stat().st_size
    if actual != expected:
        raise DatasetError(
            f"{path}: {actual} bytes on disk, header at byte 4 promises "
            f"{count} images of {rows}x{cols} = {expected} bytes"
        )
    data = np.fromfile(path, dtype=np.uint8, offset=16)
    return data.reshape(count, rows, cols)


def read_idx_labels(path: str | Path) -> np.ndarray:
    """Labels file -> uint8 array of shape (count,)."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    magic, count = _read_words(path, 2)
    if magic != LABEL_MAGIC:
        raise DatasetError(
            f"{path}: bad magic 0x{magic:08x} at byte 0, "
            f"expected 0x{LABEL_MAGIC:08x} (idx1 labels)"
        )
    expected = 8 + count
    actual = path.stat().st_size
    if actual != expected:
        raise DatasetError(
            f"{path}: {actual} bytes on disk, header at byte 4 promises "
            f"{count} labels = {expected} bytes"
        )
    labels = np.fromfile(path, dtype=np.uint8, offset=8)
    if labels.max(initial=0) > 9:
        bad = int(np.argmax(labels > 9))
        raise DatasetError(f"{path}: label {labels[bad]} > 9 at index {bad}")
    return labels


def data_root(override: str | Path | None = None) -> Path:
    """Dataset directory: explicit argument, else the environment variable."""
    if override is not None:
        return Path(override)
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    raise DatasetError(
        f"no dataset directory: pass --data-dir or set {DATA_DIR_ENV}"
    )


def load_split(split: str, root: str | Path | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Load ("train" | "test") as (images uint8 (n,28,28), labels uint8 (n,)).

    Image and label counts must agree; a mismatch means the two files
    are from different datasets and is reported as such.
    """
    if split not in SPLIT_FILES:
        raise DatasetError(f"unknown split {split!r}, expected train or test")
    base = data_root(root)
    img_name, lbl_name = SPLIT_FILES[split]
    images = read_idx_images(base / img_name)
    labels = read_idx_labels(base / lbl_name)
    if len(images) != len(labels):
        raise DatasetError(
            f"{base}: {img_name} has {len(images)} images but "
            f"{lbl_name} has {len(labels)} labels"
        )
    return images, labels


def normalize(images: np.ndarray) -> np.ndarray:
    """uint8 pixels -> float rates in [0,1], flattened to (n, 784).

    Rejects anything but uint8 input: normalizing twice would silently
    shrink every rate by another factor of 255.
    """
    images = np.asarray(images)
    if images.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got dtype {images.dtype}")
    flat = images.reshape(len(images), -1)
    return flat.astype(np.float64) / 255.0
