"""CIFAR-10 binary ingestion, normalization, batching and synthetic data.

The binary format stores fixed 3073-byte records: one label byte followed by
3072 pixel bytes (the 32x32 red plane, then green, then blue, each row-major).
Training data is spread over ``data_batch_1.bin`` .. ``data_batch_5.bin``
(10000 records each); the test split lives in ``test_batch.bin``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, CorruptionError, IngestionError

RECORD_BYTES = 1 + 3 * 32 * 32
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"
DATA_DIR_ENV = "RESPRUNE_DATA_DIR"


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, 32, 32) float32
    labels: np.ndarray  # (N,) int64
    split: str = "train"
    num_classes: int = 10

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ConfigError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")

    def __len__(self):
        return int(self.labels.shape[0])

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.split, self.num_classes)


@dataclass(frozen=True)
class NormalizationStats:
    mean: tuple
    std: tuple

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ConfigError(f"normalization std must be > 0, got {self.std}")

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "NormalizationStats":
        x = ds.images.astype(np.float64)
        return cls(tuple(x.mean(axis=(0, 2, 3)).tolist()), tuple(x.std(axis=(0, 2, 3)).tolist()))


def read_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``(uint8 images (N,3,32,32), uint8 labels)`` from one binary file."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"missing CIFAR-10 file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES:
        raise CorruptionError(f"{path}: length {raw.size} is not a multiple of {RECORD_BYTES}")
    records = raw.reshape(-1, RECORD_BYTES)
    return records[:, 1:].reshape(-1, 3, 32, 32), records[:, 0].copy()


def _resolve_dir(directory) -> Path:
    directory = Path(directory)
    nested = directory / "cifar-10-batches-bin"
    if not (directory / TEST_FILE).exists() and (nested / TEST_FILE).exists():
        return nested
    return directory


def default_data_dir() -> str | None:
    return os.environ.get(DATA_DIR_ENV)


def load_split(files, directory, split: str) -> Dataset:
    images, labels = zip(*(read_cifar_file(directory / f) for f in files))
    pixels = np.concatenate(images)
    lab = np.concatenate(labels).astype(np.int64)
    if (lab >= 10).any():
        raise CorruptionError(f"{split} split contains label values >= 10")
    return Dataset((pixels / np.float32(255)).astype(np.float32), lab, split)


def load_cifar10(directory) -> tuple[Dataset, Dataset]:
    """Load the train and test splits with pixels scaled to [0, 1]."""
    if directory is None:
        raise IngestionError(f"no CIFAR-10 directory given and ${DATA_DIR_ENV} is unset")
    directory = _resolve_dir(directory)
    return load_split(TRAIN_FILES, directory, "train"), load_split((TEST_FILE,), directory, "test")


def write_cifar_file(ds: Dataset, path) -> None:
    """Write ``ds`` in the binary record format (pixels quantized to bytes)."""
    pixels = np.clip(np.rint(ds.images * 255), 0, 255).astype(np.uint8).reshape(len(ds), -1)
    records = np.concatenate([ds.labels.astype(np.uint8)[:, None], pixels], axis=1)
    records.tofile(path)


def normalize(ds: Dataset, stats: NormalizationStats) -> Dataset:
    mean = np.asarray(stats.mean, dtype=np.float32)[None, :, None, None]
    std = np.asarray(stats.std, dtype=np.float32)[None, :, None, None]
    return Dataset(((ds.images - mean) / std).astype(np.float32), ds.labels, ds.split,
                   ds.num_classes)


def denormalize(ds: Dataset, stats: NormalizationStats) -> Dataset:
    mean = np.asarray(stats.mean, dtype=np.float32)[None, :, None, None]
    std = np.asarray(stats.std, dtype=np.float32)[None, :, None, None]
    return Dataset((ds.images * std + mean).astype(np.float32), ds.labels, ds.split,
                   ds.num_classes)


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


def shuffle_order(n: int, shuffle_seed: int | None, epoch: int = 0) -> np.ndarray:
    if shuffle_seed is None:
        return np.arange(n)
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n)


def batches(ds: Dataset, batch_size: int, shuffle_seed: int | None = 0,
            epoch: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images, one-hot targets)``; the final partial batch is kept.

    The order is a permutation seeded by ``(shuffle_seed, epoch)``;
    ``shuffle_seed=None`` keeps file order.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = shuffle_order(len(ds), shuffle_seed, epoch)
    for start in range(0, len(ds), batch_size):
        idx = order[start:start + batch_size]
        yield ds.images[idx], one_hot(ds.labels[idx], ds.num_classes)


def synthetic_dataset(n: int, classes: int = 10, seed: int = 0, noise: float = 1.0,
                      split: str = "train", shape=(3, 32, 32)) -> Dataset:
    """Gaussian blobs around one random prototype image per class.

    Labels are balanced (``i % classes`` before shuffling). Prototypes depend
    only on ``seed``, so train and test sets drawn with the same seed but
    different ``split`` share classes while having different samples.
    """
    if n < classes:
        raise ConfigError(f"synthetic_dataset needs n >= classes, got n={n}, classes={classes}")
    proto_rng = np.random.default_rng([seed, 0])
    prototypes = proto_rng.standard_normal((classes,) + tuple(shape))
    rng = np.random.default_rng([seed, 1 if split == "train" else 2])
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    images = prototypes[labels] + noise * rng.standard_normal((n,) + tuple(shape))
    return Dataset(images.astype(np.float32), labels, split, classes)
