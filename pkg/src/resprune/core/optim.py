"""SGD with momentum and L2 weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from .nn import Parameter


@dataclass
class OptimizerState:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")


def sgd_step(params: list[Parameter], state: OptimizerState) -> None:
    """In-place update: ``v = m*v + g + wd*w``; ``w -= lr*v``.

    Velocity buffers are created lazily on the first call and are matched to
    ``params`` by position.
    """
    if not state.velocity:
        state.velocity = [np.zeros_like(p.value) for p in params]
    if len(state.velocity) != len(params):
        raise ValueError(f"optimizer tracks {len(state.velocity)} buffers, got {len(params)} params")
    lr, mom, wd = state.learning_rate, state.momentum, state.weight_decay
    for p, v in zip(params, state.velocity):
        if not p.requires_grad:
            continue
        if v.shape != p.value.shape:
            raise ValueError(f"velocity shape {v.shape} != parameter shape {p.value.shape}")
        v *= mom
        v += p.grad
        if wd:
            v += wd * p.value
        p.value -= lr * v
