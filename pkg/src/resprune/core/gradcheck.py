"""Central finite-difference gradient checking for :class:`Module` fragments."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation
from .nn import Module


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self):
        lines = [f"{name:40s} {err:.3e}" for name, err in self.errors.items()]
        lines.append(f"max relative error {self.max_error:.3e} "
                     f"({'PASS' if self.passed else 'FAIL'} at {self.tolerance:g})")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8,
                   elementwise: bool = False) -> float:
    """Scale-aware error ``max|a - n| / max(max|a|, max|n|, floor)``.

    With ``elementwise`` the ratio is taken per entry instead, which is
    dominated by finite-difference round-off wherever a gradient entry is
    many orders of magnitude below the tensor's largest entry.
    """
    if not analytic.size:
        return 0.0
    diff = np.abs(analytic - numeric)
    if elementwise:
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        return float(np.max(diff / denom))
    scale = max(float(np.abs(analytic).max()), float(np.abs(numeric).max()), floor)
    return float(diff.max() / scale)


def numeric_gradient(f, x: np.ndarray, step: float, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``x`` (mutated and restored).

    ``indices`` (flat positions) limits the work to a subset; other entries stay 0.
    """
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + step
        plus = f()
        flat[i] = orig - step
        minus = f()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * step)
    return grad


def gradient_check(fragment: Module, x: np.ndarray, step: float = 1e-6,
                   tolerance: float = 1e-4, train: bool = True, seed: int = 0,
                   check_input: bool = True, floor: float = 1e-8,
                   max_entries: int | None = None) -> GradCheckReport:
    """Compare analytic and finite-difference gradients of ``sum(fragment(x) * R)``.

    ``R`` is a fixed random projection so every output element contributes.
    Every parameter with ``requires_grad`` is checked (detached parameters are
    left out of the report), plus the input gradient under the key ``"input"``.
    With ``max_entries`` larger tensors are probed at that many seeded random
    coordinates rather than exhaustively.
    """
    if x.dtype != np.float64 or any(p.value.dtype != np.float64 for p in fragment.parameters()):
        raise ContractViolation("gradient_check requires float64 inputs and parameters")
    x = x.copy()
    proj = np.random.default_rng(seed).standard_normal(fragment.forward(x, train).shape)

    def loss() -> float:
        return float(np.sum(fragment.forward(x, train) * proj))

    fragment.zero_grad()
    fragment.forward(x, train)
    grad_x = fragment.backward(proj)

    pick = np.random.default_rng([seed, 1])

    def compare(analytic, value):
        if max_entries is None or value.size <= max_entries:
            return relative_error(analytic, numeric_gradient(loss, value, step), floor)
        idx = np.sort(pick.choice(value.size, max_entries, replace=False))
        numeric = numeric_gradient(loss, value, step, idx).reshape(-1)[idx]
        return relative_error(analytic.reshape(-1)[idx], numeric, floor)

    report = GradCheckReport(tolerance=tolerance)
    for name, p in fragment.named_parameters():
        if not p.requires_grad:
            continue
        report.errors[name] = compare(p.grad.copy(), p.value)
    if check_input:
        report.errors["input"] = compare(grad_x, x)
    return report
