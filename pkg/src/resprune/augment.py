"""Seeded batch augmentations: mixup, cutout and CIFAR crop/flip.

Every transform is a pure function of its input, its config and the state
of the ``numpy.random.Generator`` it is handed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = 1.0
    enabled: bool = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"mixup.alpha must be > 0, got {self.alpha}")


@dataclass(frozen=True)
class CutoutConfig:
    size: int = 16
    enabled: bool = True

    def __post_init__(self):
        if self.size < 0:
            raise ConfigError(f"cutout.size must be >= 0, got {self.size}")


def augment_rng(seed: int, epoch: int, worker: int = 0) -> np.random.Generator:
    """Augmentation stream for one epoch; independent of init/prune/shuffle streams."""
    return np.random.default_rng([seed, epoch, worker, 0xA5])


def mix(a: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    return lam * a + (1 - lam) * b


def mixup_batch(inputs: np.ndarray, targets: np.ndarray, cfg: MixupConfig,
                rng: np.random.Generator, lam: float | None = None,
                perm: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """Convex-combine each sample with a partner from a random permutation of the batch.

    One ``lam ~ Beta(alpha, alpha)`` is drawn per batch unless ``lam`` is
    forced. Batches of fewer than two samples are returned unchanged with
    ``lam = 1``.
    """
    if inputs.shape[0] != targets.shape[0]:
        raise ContractViolation(f"inputs {inputs.shape} and targets {targets.shape} disagree on N")
    if not cfg.enabled or inputs.shape[0] < 2:
        return inputs, targets, 1.0
    if lam is None:
        lam = float(rng.beta(cfg.alpha, cfg.alpha))
    if not 0 <= lam <= 1:
        raise ContractViolation(f"mixup lambda must lie in [0, 1], got {lam}")
    if perm is None:
        perm = rng.permutation(inputs.shape[0])
    mixed_x = mix(inputs, inputs[perm], lam).astype(inputs.dtype, copy=False)
    mixed_y = mix(targets, targets[perm], lam).astype(targets.dtype, copy=False)
    return mixed_x, mixed_y, lam


def cutout_box(h: int, w: int, size: int, cy: int, cx: int) -> tuple[int, int, int, int]:
    """Clipped ``(y1, y2, x1, x2)`` of a ``size``-square centred on ``(cy, cx)``."""
    half = size // 2
    y1, y2 = np.clip(cy - half, 0, h), np.clip(cy - half + size, 0, h)
    x1, x2 = np.clip(cx - half, 0, w), np.clip(cx - half + size, 0, w)
    return int(y1), int(y2), int(x1), int(x2)


def cutout(image: np.ndarray, cfg: CutoutConfig, rng: np.random.Generator) -> np.ndarray:
    """Zero a square patch around a uniformly drawn centre pixel (CHW image)."""
    if image.ndim != 3:
        raise ContractViolation(f"cutout expects a CHW image, got shape {image.shape}")
    if not cfg.enabled or cfg.size == 0:
        return image
    _, h, w = image.shape
    cy, cx = int(rng.integers(h)), int(rng.integers(w))
    y1, y2, x1, x2 = cutout_box(h, w, cfg.size, cy, cx)
    out = image.copy()
    out[:, y1:y2, x1:x2] = 0
    return out


def cutout_batch(images: np.ndarray, cfg: CutoutConfig, rng: np.random.Generator) -> np.ndarray:
    return np.stack([cutout(img, cfg, rng) for img in images]) if len(images) else images


def crop_flip(image: np.ndarray, dy: int, dx: int, flip: bool, pad: int = 4) -> np.ndarray:
    """Zero-pad by ``pad``, take the crop at offset ``(dy, dx)``, optionally mirror."""
    _, h, w = image.shape
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    out = padded[:, dy:dy + h, dx:dx + w]
    if flip:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def standard_augment(image: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random crop from the zero-padded image plus a horizontal flip with probability 0.5."""
    dy, dx = (int(v) for v in rng.integers(0, 2 * pad + 1, size=2))
    return crop_flip(image, dy, dx, bool(rng.random() < 0.5), pad)


def standard_augment_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return np.stack([standard_augment(img, rng) for img in images]) if len(images) else images
