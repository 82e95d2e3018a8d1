"""Dataset ingestion and partitioning for the binary-classification harness.

Images and labels arrive in the IDX binary format (big-endian magic
0x00000803 for image files, 0x00000801 for label files).  Ingestion filters
two digits, maps them to labels +1/-1, flattens images to feature vectors
scaled into [0, 1], and preserves file order.  Splits can be serialized to
CSV with round-trip-exact floats and re-ingested bit-identically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Malformed dataset file; message carries the failing byte offset."""


@dataclass(frozen=True)
class DatasetSplit:
    """Train and test samples plus a provenance note."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        for X, y in ((self.train_x, self.train_y), (self.test_x, self.test_y)):
            if X.shape[0] != y.shape[0]:
                raise ValueError("feature and label counts disagree")
            if y.size and not np.all(np.abs(y) == 1.0):
                raise ValueError("labels must be +1 or -1")
        if self.train_x.size and self.test_x.size and self.train_x.shape[1] != self.test_x.shape[1]:
            raise ValueError("train and test feature dimensions disagree")


def _read_exact(fh, count: int, offset: int, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise DataFormatError(
            f"truncated file: wanted {count} bytes of {what} at offset {offset}, got {len(buf)}")
    return buf


def read_idx_images(path) -> np.ndarray:
    """(count, rows, cols) uint8 array from an IDX image file."""
    with open(path, "rb") as fh:
        head = _read_exact(fh, 16, 0, "image header")
        magic, count, rows, cols = struct.unpack(">IIII", head)
        if magic != IMAGE_MAGIC:
            raise DataFormatError(
                f"bad magic 0x{magic:08x} at offset 0 (expected 0x{IMAGE_MAGIC:08x})")
        raw = _read_exact(fh, count * rows * cols, 16, "pixels")
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    """(count,) uint8 array from an IDX label file."""
    with open(path, "rb") as fh:
        head = _read_exact(fh, 8, 0, "label header")
        magic, count = struct.unpack(">II", head)
        if magic != LABEL_MAGIC:
            raise DataFormatError(
                f"bad magic 0x{magic:08x} at offset 0 (expected 0x{LABEL_MAGIC:08x})")
        raw = _read_exact(fh, count, 8, "labels")
    return np.frombuffer(raw, dtype=np.uint8)


def write_idx_images(path, images: np.ndarray):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def ingest_idx_pair(images_path, labels_path, digit_pos: int, digit_neg: int,
                    limit: int | None = None, feature_scale: float = 255.0):
    """Filter an IDX image/label pair down to two digits.

    Keeps file order, maps digit_pos to +1 and digit_neg to -1, flattens
    images and divides by feature_scale.  ``limit`` truncates after
    filtering; 0 gives an empty part.
    """
    for d in (digit_pos, digit_neg):
        if not (0 <= d <= 9):
            raise ValueError(f"digit {d} outside 0..9")
    if digit_pos == digit_neg:
        raise ValueError("positive and negative digits must differ")
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}")
    keep = (labels == digit_pos) | (labels == digit_neg)
    images, labels = images[keep], labels[keep]
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    X = images.reshape(images.shape[0], -1).astype(float) / feature_scale
    y = np.where(labels == digit_pos, 1.0, -1.0)
    return X, y


def partition(X: np.ndarray, y: np.ndarray, n: int) -> list:
    """Contiguous per-agent batches in file order.

    Sizes are N // n each, with the remainder spread one extra sample to the
    first agents; deterministic and order-preserving.
    """
    if n < 1:
        raise ValueError("need at least one agent")
    N = X.shape[0]
    if N == 0:
        raise ValueError("cannot partition an empty dataset")
    base, extra = divmod(N, n)
    out = []
    start = 0
    for i in range(n):
        size = base + (1 if i < extra else 0)
        out.append((X[start:start + size], y[start:start + size]))
        start += size
    return out


def write_split_csv(path, X: np.ndarray, y: np.ndarray):
    """label,feature0,feature1,... rows with shortest round-trip floats."""
    with open(path, "w") as fh:
        for label, row in zip(y, X):
            fh.write(repr(float(label)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def read_split_csv(path):
    labels, rows = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.rstrip("\n").split(",")
            labels.append(float(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    if not rows:
        return np.empty((0, 0)), np.empty(0)
    return np.asarray(rows), np.asarray(labels)


def synthetic_digit_pair(n_train: int, n_test: int, seed: int = 0,
                         side: int = 28) -> dict:
    """Two-class synthetic image set in the same shape as the real task.

    Class +1 images carry a bright blob in the upper-left quadrant, class -1
    in the lower-right, over uniform pixel noise; the classes are linearly
    separable at roughly 98-99% accuracy.  Returns uint8 image/label arrays
    keyed train_images/train_labels/test_images/test_labels, with labels 3
    and 7 so the ingestion path is exercised unchanged.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xDA7A,)))
    half = side // 2

    def make(count):
        images = rng.integers(0, 80, size=(count, side, side)).astype(np.uint8)
        labels = rng.integers(0, 2, size=count).astype(np.uint8)
        for idx in range(count):
            r0, c0 = (2, 2) if labels[idx] else (half + 2, half + 2)
            blob = rng.integers(120, 255, size=(half - 4, half - 4))
            patch = images[idx, r0:r0 + half - 4, c0:c0 + half - 4].astype(np.int64)
            images[idx, r0:r0 + half - 4, c0:c0 + half - 4] = np.minimum(patch + blob, 255).astype(np.uint8)
        return images, np.where(labels == 1, 3, 7).astype(np.uint8)

    train_images, train_labels = make(n_train)
    test_images, test_labels = make(n_test)
    return {
        "train_images": train_images, "train_labels": train_labels,
        "test_images": test_images, "test_labels": test_labels,
    }
