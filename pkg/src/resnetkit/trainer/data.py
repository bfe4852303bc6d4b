"""Dataset ingestion and augmentation for desk-scale training.

Supports the standard binary layouts of the two small image-classification
sets (record = label byte(s) + 3072 channel-major RGB bytes) plus a
deterministic synthetic stand-in so tests and demos run without downloads.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

# widely used per-channel normalization constants for the 32x32 sets
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)
CIFAR100_MEAN = (0.5071, 0.4865, 0.4409)
CIFAR100_STD = (0.2673, 0.2564, 0.2762)

_IMAGE_BYTES = 3 * 32 * 32


class DataFormatError(ValueError):
    """Missing or malformed dataset file."""


@dataclass
class Dataset:
    """In-memory normalized image set."""

    images: np.ndarray  # [N, 3, 32, 32] float32
    labels: np.ndarray  # [N] int64
    classes: int

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int) -> "Dataset":
        if n > len(self):
            raise ValueError(f"subset of {n} from {len(self)} samples")
        return Dataset(self.images[:n], self.labels[:n], self.classes)


@dataclass
class LabeledBatch:
    """One normalized minibatch."""

    images: np.ndarray  # [N, 3, 32, 32] float32
    labels: np.ndarray  # [N] int64


def _parse_records(raw: bytes, path: Path, label_bytes: int, label_offset: int) -> Tuple[np.ndarray, np.ndarray]:
    record = label_bytes + _IMAGE_BYTES
    if len(raw) == 0 or len(raw) % record:
        raise DataFormatError(
            f"{path}: truncated at byte {len(raw)}; expected a multiple of {record}-byte records"
        )
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
    labels = arr[:, label_offset].astype(np.int64)
    images = arr[:, label_bytes:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def _normalize(images: np.ndarray, mean, std) -> np.ndarray:
    m = np.asarray(mean, dtype=np.float32)[None, :, None, None]
    s = np.asarray(std, dtype=np.float32)[None, :, None, None]
    return (images - m) / s


def load_cifar(data_dir, which: int = 10) -> Tuple[Dataset, Dataset]:
    """Read the binary distribution from ``data_dir`` and return (train, test).

    which=10: data_batch_1..5.bin + test_batch.bin, 3073-byte records
    (label, 3072 pixels). which=100: train.bin + test.bin, 3074-byte records
    (coarse label, fine label, 3072 pixels); the fine label is used.
    """
    root = Path(data_dir)
    if which == 10:
        train_files = [root / f"data_batch_{i}.bin" for i in range(1, 6)]
        test_files = [root / "test_batch.bin"]
        label_bytes, label_offset, classes = 1, 0, 10
        mean, std = CIFAR10_MEAN, CIFAR10_STD
    elif which == 100:
        train_files = [root / "train.bin"]
        test_files = [root / "test.bin"]
        label_bytes, label_offset, classes = 2, 1, 100
        mean, std = CIFAR100_MEAN, CIFAR100_STD
    else:
        raise ValueError(f"which must be 10 or 100, got {which}")

    def read(files):
        images, labels = [], []
        for f in files:
            if not f.exists():
                raise DataFormatError(f"missing dataset file: {f}")
            im, lab = _parse_records(f.read_bytes(), f, label_bytes, label_offset)
            images.append(im)
            labels.append(lab)
        return Dataset(_normalize(np.concatenate(images), mean, std), np.concatenate(labels), classes)

    return read(train_files), read(test_files)


def synthetic_dataset(classes: int, n: int, seed: int = 0) -> Dataset:
    """Deterministic class-separable blobs shaped like 32x32 RGB images.

    Each class owns a fixed unit-norm template; samples are template plus
    isotropic noise at a margin that keeps classes linearly separable.
    Labels are balanced to within one sample.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if n < classes:
        raise ValueError(f"need n >= classes, got n={n}, classes={classes}")
    rng = np.random.default_rng(seed)
    templates = rng.standard_normal((classes, 3, 32, 32)).astype(np.float32)
    templates /= np.sqrt((templates**2).mean(axis=(1, 2, 3), keepdims=True))
    labels = np.arange(n, dtype=np.int64) % classes
    labels = labels[rng.permutation(n)]
    noise = rng.standard_normal((n, 3, 32, 32)).astype(np.float32)
    images = 1.5 * templates[labels] + 0.75 * noise
    return Dataset(images.astype(np.float32), labels, classes)


def hflip(images: np.ndarray) -> np.ndarray:
    """Mirror a [N,C,H,W] batch along the width axis; an involution."""
    return images[..., ::-1]


def sample_crop_offsets(rng: np.random.Generator, n: int, pad: int) -> np.ndarray:
    """Random (row, col) crop origins in [0, 2*pad]^2 after padding."""
    return rng.integers(0, 2 * pad + 1, size=(n, 2))


def augment(batch: LabeledBatch, rng: np.random.Generator, *, crop: bool = True, flip: bool = True, pad: int = 4) -> LabeledBatch:
    """Pad-and-crop plus random horizontal flip; identity when flags are off."""
    if not crop and not flip:
        return batch
    images = batch.images
    n, c, h, w = images.shape
    if crop:
        padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        offsets = sample_crop_offsets(rng, n, pad)
        out = np.empty_like(images)
        for i, (dy, dx) in enumerate(offsets):
            out[i] = padded[i, :, dy : dy + h, dx : dx + w]
        images = out
    if flip:
        flips = rng.random(n) < 0.5
        images = images.copy() if not crop else images
        images[flips] = hflip(images[flips])
    return LabeledBatch(np.ascontiguousarray(images), batch.labels)
