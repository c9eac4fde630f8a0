"""Fast built-in health checks run by ``resprune selftest``."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import BatchNorm2d, Conv2d, GlobalAvgPool, Linear, ReLU, gradient_check
from .core.gradcheck import numeric_gradient, relative_error
from .core.ops import softmax_cross_entropy
from .flops import model_flops
from .models import BasicBlock, ModelSpec, build_resnet, extract_compact
from .pruning import PruneSchedule, apply_soft_prune

# published dense / pruned (keep ratio 0.9) MegaFLOPs per depth
PUBLISHED_DENSE = {20: 40.55, 32: 68.86, 44: 97.17, 56: 125.49, 110: 252.89}
PUBLISHED_PRUNED = {20: 34.37, 32: 58.58, 44: 82.78, 56: 106.99, 110: 215.92}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28} {self.detail} ({self.seconds:.1f}s)"


def _fragments(rng: np.random.Generator):
    f64 = np.float64
    yield "grad.conv2d", Conv2d(3, 4, 3, 1, 1, dtype=f64), (2, 3, 5, 5)
    yield "grad.conv2d_stride2", Conv2d(2, 3, 3, 2, 1, dtype=f64), (2, 2, 6, 6)
    yield "grad.batchnorm_train", BatchNorm2d(3, dtype=f64), (4, 3, 3, 3)
    yield "grad.relu", ReLU(), (2, 3, 4, 4)
    yield "grad.global_avg_pool", GlobalAvgPool(), (2, 3, 4, 4)
    yield "grad.linear", Linear(6, 4, dtype=f64), (3, 6)
    yield "grad.basic_block", BasicBlock(4, 4, 1, dtype=f64), (2, 4, 5, 5)
    yield "grad.basic_block_downsample", BasicBlock(2, 4, 2, dtype=f64), (2, 2, 6, 6)


def _randomize(module, rng):
    for p in module.parameters():
        p.value[...] = rng.standard_normal(p.value.shape)


def check_gradients(seed: int = 0) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    out = []
    for name, frag, shape in _fragments(rng):
        _randomize(frag, rng)
        x = rng.standard_normal(shape)
        if name == "grad.relu":
            x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
        rep = gradient_check(frag, x, seed=seed)
        out.append((name, rep.passed, f"max rel err {rep.max_error:.2e}"))
    logits = rng.standard_normal((4, 5))
    t = rng.dirichlet(np.ones(5), size=4)
    _, g = softmax_cross_entropy(logits, t)
    num = numeric_gradient(lambda: softmax_cross_entropy(logits, t)[0], logits, 1e-6)
    err = relative_error(g, num)
    out.append(("grad.softmax_cross_entropy", err < 1e-4, f"max rel err {err:.2e}"))
    return out


def check_dense_flops() -> tuple[bool, str]:
    worst = max(abs(model_flops(ModelSpec(d)).megaflops / v - 1) for d, v in PUBLISHED_DENSE.items())
    return worst < 0.005, f"worst deviation {100 * worst:.3f}%"


def check_pruned_flops() -> tuple[bool, str]:
    worst = max(abs(model_flops(ModelSpec(d), keep_ratio=0.9).megaflops / v - 1)
                for d, v in PUBLISHED_PRUNED.items())
    return worst < 0.01, f"worst deviation {100 * worst:.3f}%"


def check_compact_equivalence(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    model = build_resnet(ModelSpec(20), seed, dtype=np.float64)
    for _, bn_path in model.conv_bn_pairs():
        bn = model.module(bn_path)
        bn.running_mean[...] = rng.standard_normal(bn.running_mean.shape) * 0.1
        bn.running_var[...] = rng.uniform(0.5, 1.5, bn.running_var.shape)
        bn.bias.value[...] = rng.standard_normal(bn.bias.value.shape) * 0.1
    sched = PruneSchedule(keep_ratio=0.7, selection_mode="stochastic_by_norm")
    masks = apply_soft_prune(model, sched, rng)
    compact = extract_compact(model, masks).model
    x = rng.standard_normal((4, 3, 32, 32))
    diff = float(np.max(np.abs(model.forward(x, False) - compact.forward(x, False))))
    return diff < 1e-5, f"max |logit diff| {diff:.2e}"


def run_selftest(emit: Callable[[str], None] = print) -> list[CheckResult]:
    results = []

    def record(name, fn):
        t0 = time.perf_counter()
        try:
            outcome = fn()
        except Exception as exc:  # a crashing check is a failing check
            outcome = [(name, False, f"raised {type(exc).__name__}: {exc}")]
        if isinstance(outcome, tuple):
            outcome = [(name,) + outcome]
        dt = time.perf_counter() - t0
        for n, ok, detail in outcome:
            res = CheckResult(n, bool(ok), detail, dt / len(outcome))
            results.append(res)
            emit(res.line())

    record("grad", check_gradients)
    record("flops.dense_table", check_dense_flops)
    record("flops.pruned_table", check_pruned_flops)
    record("compact_equivalence", check_compact_equivalence)
    return results
