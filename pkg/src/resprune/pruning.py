"""Soft filter pruning (SFP).

Each pruning step ranks every in-scope convolution's output filters by
their l_p norm, zeroes the selected ones and lets training continue; zeroed
filters keep receiving gradient and may grow back before the next step.
Physical removal happens once, at the end, via :func:`finalize_compact`.

Zeroing a filter also zeroes the matching batch-norm shift and running
statistics, which makes the channel output exactly zero in both train and
eval mode. The batch-norm scale is left alone: with it zeroed no gradient
could reach the filter and soft pruning would degenerate into hard pruning.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .models import CompactExtraction, ModelSpec, ResNet, conv_paths, extract_compact

SELECTION_MODES = ("smallest_norm", "stochastic_by_norm")

# Named scope policies. "all" is the calibrated default: it is the only
# policy whose nominal cost reproduces the published pruned FLOP counts.
SCOPE_POLICIES = ("all", "block_internal", "block_internal+stem", "none")


def scope_paths(spec: ModelSpec, policy: str) -> list[str]:
    """Conv paths that a named scope policy makes prunable."""
    if policy not in SCOPE_POLICIES:
        raise ConfigError(f"unknown prune scope {policy!r}; choose from {', '.join(SCOPE_POLICIES)}")
    convs = conv_paths(spec)
    if policy == "all":
        return convs
    if policy == "none":
        return []
    internal = [c for c in convs if c.endswith(".conv1") and c != "conv1"]
    return (["conv1"] if policy == "block_internal+stem" else []) + internal


def scope_layers(model: ResNet, policy: str) -> list[str]:
    return scope_paths(model.spec, policy)


@dataclass
class PruneSchedule:
    keep_ratio: float = 0.9
    p_norm: float = 2.0
    selection_mode: str = "smallest_norm"
    scope: str = "all"
    frequency: int = 1
    epsilon: float = 1e-12

    def __post_init__(self):
        check_keep_ratio(self.keep_ratio)
        if self.p_norm <= 0:
            raise ConfigError(f"p_norm must be > 0, got {self.p_norm}")
        if self.selection_mode not in SELECTION_MODES:
            raise ConfigError(f"unknown selection mode {self.selection_mode!r}; "
                              f"choose from {', '.join(SELECTION_MODES)}")
        if self.scope not in SCOPE_POLICIES:
            raise ConfigError(f"unknown prune scope {self.scope!r}; "
                              f"choose from {', '.join(SCOPE_POLICIES)}")
        if self.frequency < 1:
            raise ConfigError(f"prune frequency must be >= 1, got {self.frequency}")


def check_keep_ratio(keep_ratio: float) -> None:
    if not 0 < keep_ratio <= 1:
        raise ConfigError(f"keep_ratio must lie in (0, 1], got {keep_ratio}")


def num_pruned(filter_count: int, keep_ratio: float) -> int:
    # the small slack absorbs binary round-off, e.g. 30 * (1 - 0.9) = 2.9999999999999996
    return int(math.floor(filter_count * (1 - keep_ratio) + 1e-9))


def compute_filter_norms(weight: np.ndarray, p: float = 2.0) -> np.ndarray:
    """l_p norm of each output filter of an ``(O, I, K, K)`` weight."""
    if p <= 0:
        raise ConfigError(f"p must be > 0, got {p}")
    flat = np.abs(weight.reshape(weight.shape[0], -1).astype(np.float64))
    return (flat ** p).sum(axis=1) ** (1.0 / p)


def select_filters(norms: np.ndarray, keep_ratio: float, mode: str = "smallest_norm",
                   rng: np.random.Generator | None = None, epsilon: float = 1e-12) -> np.ndarray:
    """Indices of filters to prune, sorted ascending.

    ``smallest_norm`` takes the lowest norms, ties going to the lower index.
    ``stochastic_by_norm`` samples without replacement with probability
    proportional to ``norm + epsilon``.
    """
    check_keep_ratio(keep_ratio)
    norms = np.asarray(norms, dtype=np.float64)
    if norms.size == 0:
        raise ConfigError("select_filters needs at least one filter norm")
    k = num_pruned(norms.size, keep_ratio)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if mode == "smallest_norm":
        order = np.argsort(norms, kind="stable")
        return np.sort(order[:k])
    if mode == "stochastic_by_norm":
        if rng is None:
            raise ConfigError("stochastic_by_norm selection needs an rng")
        w = norms + epsilon
        return np.sort(rng.choice(norms.size, size=k, replace=False, p=w / w.sum()))
    raise ConfigError(f"unknown selection mode {mode!r}; choose from {', '.join(SELECTION_MODES)}")


def apply_masks(model: ResNet, masks: dict[str, np.ndarray]) -> None:
    """Zero every masked-out filter plus its batch-norm shift and running stats, in place."""
    bn_of = dict(model.conv_bn_pairs())
    for path, keep in masks.items():
        if path not in bn_of:
            raise ConfigError(f"prune scope names missing layer '{path}'")
        drop = ~np.asarray(keep, dtype=bool)
        if not drop.any():
            continue
        bn = model.module(bn_of[path])
        model.module(path).weight.value[drop] = 0
        bn.bias.value[drop] = 0
        bn.running_mean[drop] = 0
        bn.running_var[drop] = 0


def apply_soft_prune(model: ResNet, schedule: PruneSchedule,
                     rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
    """One pruning step: select and zero filters in every in-scope layer.

    Returns the keep-masks for all in-scope layers.
    """
    masks = {}
    for path in scope_layers(model, schedule.scope):
        weight = model.module(path).weight.value
        pruned = select_filters(compute_filter_norms(weight, schedule.p_norm), schedule.keep_ratio,
                                schedule.selection_mode, rng, schedule.epsilon)
        keep = np.ones(weight.shape[0], dtype=bool)
        keep[pruned] = False
        masks[path] = keep
    apply_masks(model, masks)
    return masks


@dataclass
class SFPResult:
    model: ResNet
    mask_history: list[dict[str, np.ndarray]] = field(default_factory=list)

    @property
    def final_masks(self) -> dict[str, np.ndarray]:
        return self.mask_history[-1] if self.mask_history else {}


def sfp_epoch_loop(model: ResNet, schedule: PruneSchedule, trainer_hook: Callable[[int], object],
                   epochs: int, start_epoch: int = 0, prune_seed: int = 0,
                   mask_history: list | None = None) -> SFPResult:
    """Alternate pruning and one-epoch training, ending with a final prune.

    ``trainer_hook(epoch)`` must train exactly one epoch. Pruning happens
    before epoch ``e`` whenever ``e % schedule.frequency == 0`` and once more
    after the last epoch, so the returned model carries exact zero filters.
    Per-epoch prune randomness is derived from ``(prune_seed, epoch)`` which
    makes a resumed loop identical to an uninterrupted one.
    """
    history = list(mask_history or [])
    for epoch in range(start_epoch, epochs):
        if epoch % schedule.frequency == 0:
            history.append(apply_soft_prune(model, schedule, prune_rng(prune_seed, epoch)))
        trainer_hook(epoch)
    history.append(apply_soft_prune(model, schedule, prune_rng(prune_seed, epochs)))
    return SFPResult(model, history)


def prune_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def finalize_compact(model: ResNet, schedule: PruneSchedule,
                     masks: dict[str, np.ndarray] | None = None) -> CompactExtraction:
    """Physically remove the zero filters left by the last pruning step.

    Without explicit ``masks`` the keep-set is read off the model: a filter is
    dropped when it is in scope and its weights are exactly zero, capped so
    that no more than the scheduled number of filters leave each layer.
    """
    if masks is None:
        masks = {}
        for path in scope_layers(model, schedule.scope):
            norms = compute_filter_norms(model.module(path).weight.value, schedule.p_norm)
            k = num_pruned(norms.size, schedule.keep_ratio)
            zero = np.flatnonzero(norms == 0)[:k]
            keep = np.ones(norms.size, dtype=bool)
            keep[zero] = False
            masks[path] = keep
    return extract_compact(model, masks)
