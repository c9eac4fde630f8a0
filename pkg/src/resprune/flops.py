"""Multiply-accumulate (MAC) cost accounting.

One FLOP here is one multiply-accumulate. Only convolutions and the final
classifier are charged; batch norm, ReLU, pooling and residual adds are
free. Costs can be computed three ways:

* dense: every layer at full width;
* from masks: exact integer channel counts implied by per-layer keep-masks
  (identical to the cost of the extracted compact model);
* nominal: a keep ratio applied as a real-valued width factor to each
  in-scope layer, the hand-calculation convention used for published
  pruned-ResNet FLOP figures.

Channel propagation follows the compact model's topology: a convolution's
input width shrinks only when it is fed directly by a pruned convolution
(stem -> first ``conv1``, ``conv1`` -> ``conv2``). Inputs read from the
residual stream stay full width, as does the classifier.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .core.ops import conv_output_size
from .errors import ConfigError, ContractViolation
from .models import ModelSpec, ResNet, effective_channels
from .pruning import check_keep_ratio, num_pruned, scope_paths

COUNTING_RULES = ("nominal", "floor", "round", "ceil")


@dataclass(frozen=True)
class LayerCost:
    path: str
    h_out: int
    w_out: int
    k: int
    c_in: float
    c_out: float
    macs: float


@dataclass
class FlopReport:
    layers: list[LayerCost] = field(default_factory=list)

    @property
    def total_macs(self) -> float:
        total = sum(layer.macs for layer in self.layers)
        return int(total) if all(isinstance(layer.macs, int) for layer in self.layers) else total

    @property
    def megaflops(self) -> float:
        return self.total_macs / 1e6

    def render(self) -> str:
        header = f"{'layer':<18} {'h_out':>5} {'w_out':>5} {'k':>2} {'c_in':>7} {'c_out':>7} {'macs':>14}"
        lines = [header, "-" * len(header)]
        for lc in self.layers:
            lines.append(f"{lc.path:<18} {lc.h_out:>5} {lc.w_out:>5} {lc.k:>2} {_num(lc.c_in):>7} "
                         f"{_num(lc.c_out):>7} {_num(lc.macs):>14}")
        lines.append("-" * len(header))
        lines.append(f"total MACs {_num(self.total_macs)}  ({self.megaflops:.2f} MegaFLOPs)")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "h_out", "w_out", "k", "c_in", "c_out", "macs"])
        for lc in self.layers:
            w.writerow([lc.path, lc.h_out, lc.w_out, lc.k, _num(lc.c_in), _num(lc.c_out),
                        _num(lc.macs)])
        return buf.getvalue()


def _num(x) -> str:
    if isinstance(x, (int, np.integer)) or float(x).is_integer():
        return str(int(x))
    return f"{x:.4f}".rstrip("0").rstrip(".")


def conv_macs(c_in, c_out, k: int, h_out: int, w_out: int):
    """MACs of one convolution: ``h_out * w_out * k^2 * c_in * c_out``."""
    if min(k, h_out, w_out) < 1 or c_in <= 0 or c_out <= 0:
        raise ContractViolation(f"conv_macs needs positive arguments, got "
                                f"c_in={c_in} c_out={c_out} k={k} h_out={h_out} w_out={w_out}")
    return h_out * w_out * k * k * c_in * c_out


def _kept_width(rule: str, channels: int, keep_ratio: float):
    if rule == "nominal":
        return channels * keep_ratio
    if rule == "floor":
        return channels - num_pruned(channels, keep_ratio)
    if rule == "round":
        return channels - int(round(channels * (1 - keep_ratio)))
    if rule == "ceil":
        return channels - int(math.ceil(channels * (1 - keep_ratio) - 1e-9))
    raise ConfigError(f"unknown counting rule {rule!r}; choose from {', '.join(COUNTING_RULES)}")


def _layout(spec: ModelSpec) -> list[tuple[str, int, int, int, int, str | None]]:
    """``(path, h_out, w_out, full_c_in, full_c_out, direct_feeder)`` for every conv."""
    _, h, w = spec.input_shape
    c0 = spec.stage_channels[0]
    rows = [("conv1", h, w, spec.input_shape[0], c0, None)]
    in_planes = c0
    for s, planes in enumerate(spec.stage_channels):
        for b in range(spec.blocks_per_stage):
            stride = 2 if (s > 0 and b == 0) else 1
            h = conv_output_size(h, 3, stride, 1)
            w = conv_output_size(w, 3, stride, 1)
            path = f"layer{s + 1}.{b}"
            feeder = "conv1" if (s == 0 and b == 0) else None
            rows.append((f"{path}.conv1", h, w, in_planes, planes, feeder))
            rows.append((f"{path}.conv2", h, w, planes, planes, f"{path}.conv1"))
            in_planes = planes
    return rows


def model_flops(spec: ModelSpec, masks: dict[str, np.ndarray] | None = None,
                keep_ratio: float | None = None, scope: str = "all",
                counting: str = "nominal") -> FlopReport:
    """Cost of a ResNet described by ``spec``.

    With ``masks`` the exact integer widths they imply are used (``scope``
    and ``keep_ratio`` are ignored). Otherwise, with ``keep_ratio``, every
    layer in the named ``scope`` policy is narrowed by ``counting``; with
    neither, the dense cost is returned.
    """
    layout = _layout(spec)
    widths: dict[str, float] = {path: c_out for path, _, _, _, c_out, _ in layout}
    if masks is not None:
        for path, keep in masks.items():
            if path not in widths:
                raise ContractViolation(f"mask for unknown conv layer '{path}'")
            keep = np.asarray(keep, dtype=bool)
            if keep.shape != (widths[path],):
                raise ContractViolation(f"mask for '{path}' has length {keep.size}, "
                                        f"layer has {widths[path]} filters")
            if not keep.any():
                raise ContractViolation(f"mask for '{path}' removes every filter")
            widths[path] = int(keep.sum())
    elif keep_ratio is not None:
        check_keep_ratio(keep_ratio)
        for path in scope_paths(spec, scope):
            widths[path] = _kept_width(counting, widths[path], keep_ratio)

    report = FlopReport()
    for path, h, w, c_in, _, feeder in layout:
        c_in_eff = widths[feeder] if feeder else c_in
        c_out_eff = widths[path]
        report.layers.append(LayerCost(path, h, w, 3, c_in_eff, c_out_eff,
                                       conv_macs(c_in_eff, c_out_eff, 3, h, w)))
    c_last = spec.stage_channels[-1]
    report.layers.append(LayerCost("linear", 1, 1, 1, c_last, spec.num_classes,
                                   conv_macs(c_last, spec.num_classes, 1, 1, 1)))
    return report


def model_cost(model: ResNet) -> FlopReport:
    """Cost read directly off a (possibly compact) model's weight shapes."""
    report = FlopReport()
    for path, h, w, k, c_in, c_out in effective_channels(model):
        report.layers.append(LayerCost(path, h, w, k, c_in, c_out, conv_macs(c_in, c_out, k, h, w)))
    return report


def flop_delta(dense: FlopReport, pruned: FlopReport) -> float:
    """Percentage decrease in total MACs, rounded to one decimal."""
    return round(100.0 * (1.0 - pruned.total_macs / dense.total_macs), 1)
