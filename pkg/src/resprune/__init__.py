"""Residual CNNs with mixup/cutout, soft filter pruning and exact FLOP accounting."""

__version__ = "0.1.0"
