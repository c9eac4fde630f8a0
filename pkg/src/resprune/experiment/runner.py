"""Training runs: control, regularized, pruned and combined networks.

A run writes everything under its output directory:

* ``metrics.csv``: one row per completed epoch (deterministic for fixed seeds);
* ``timing.csv``: wall-clock seconds per epoch (kept apart so that
  ``metrics.csv`` stays byte-identical across repeated runs);
* ``checkpoint.rpck``: latest model + optimizer state, used for resuming;
* ``result.json``: the final :class:`RunResult`.

Augmentation is applied per batch in the order crop/flip, cutout, mixup.
Pruning happens at epoch boundaries (see :func:`resprune.pruning.sfp_epoch_loop`).
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..augment import augment_rng, cutout_batch, mixup_batch, standard_augment_batch
from ..checkpoint import load_checkpoint, save_checkpoint
from ..core.ops import softmax_cross_entropy
from ..core.optim import OptimizerState, sgd_step
from ..data import (Dataset, NormalizationStats, batches, default_data_dir, load_cifar10,
                    normalize, synthetic_dataset)
from ..errors import ContractViolation, NumericFaultError
from ..flops import FlopReport, model_cost, model_flops
from ..models import ResNet, build_resnet
from ..pruning import apply_soft_prune, finalize_compact, prune_rng
from .config import ExperimentConfig, dump_config

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
TIMING_FILE = "timing.csv"
CHECKPOINT_FILE = "checkpoint.rpck"
RESULT_FILE = "result.json"
METRICS_COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "test_acc", "mflops")
EVAL_BATCH = 256


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_acc: float | None
    mflops: float
    seconds: float = 0.0

    def csv_row(self) -> str:
        test = "" if self.test_acc is None else repr(self.test_acc)
        return f"{self.epoch},{self.lr!r},{self.train_loss!r},{self.train_acc!r},{test},{self.mflops!r}\n"


@dataclass
class RunResult:
    method: str
    depth: int
    accuracy: float
    mflops: float
    nominal_mflops: float | None = None
    train_accuracy: float | None = None
    epochs: int = 0
    config_hash: str = ""
    checkpoint: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.accuracy <= 100:
            raise ContractViolation(f"accuracy must lie in [0, 100], got {self.accuracy}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass(frozen=True)
class GateOutcome:
    passed: bool
    margin: float  # candidate - control, percentage points

    def __bool__(self):
        return self.passed


def accuracy_gate(candidate: RunResult, control: RunResult, threshold: float = 5.0,
                  relative: bool = False) -> GateOutcome:
    """Pass iff the candidate is at most ``threshold`` below the same-depth control.

    ``threshold`` is in percentage points by default; with ``relative=True``
    it is a percentage of the control accuracy instead.
    """
    if candidate.depth != control.depth:
        raise ContractViolation(f"accuracy_gate compares equal depths, got candidate "
                                f"{candidate.depth} vs control {control.depth}")
    margin = round(candidate.accuracy - control.accuracy, 10)
    allowed = threshold * control.accuracy / 100 if relative else threshold
    return GateOutcome(passed=-margin <= allowed + 1e-9, margin=round(margin, 2))


def evaluate(model: ResNet, test: Dataset, batch_size: int = EVAL_BATCH) -> float:
    """Top-1 accuracy in percent, eval mode; argmax ties go to the lowest class index."""
    if len(test) == 0:
        return 0.0
    correct = 0
    for start in range(0, len(test), batch_size):
        logits = model.forward(test.images[start:start + batch_size], train=False)
        correct += int((np.argmax(logits, axis=1) == test.labels[start:start + batch_size]).sum())
    return 100.0 * correct / len(test)


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.data_source == "synthetic":
        train = synthetic_dataset(cfg.synthetic_train, seed=cfg.synthetic_seed,
                                  noise=cfg.synthetic_noise, split="train")
        test = synthetic_dataset(cfg.synthetic_test, seed=cfg.synthetic_seed,
                                 noise=cfg.synthetic_noise, split="test")
    else:
        train, test = load_cifar10(cfg.data_dir or default_data_dir())
    if cfg.train_subset:
        train = train.subset(cfg.train_subset)
    if cfg.test_subset:
        test = test.subset(cfg.test_subset)
    if cfg.normalize:
        stats = NormalizationStats.from_dataset(train)
        train, test = normalize(train, stats), normalize(test, stats)
    return train, test


def _augment(images: np.ndarray, targets: np.ndarray, cfg: ExperimentConfig,
             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if cfg.standard_augment:
        images = standard_augment_batch(images, rng)
    if cfg.cutout.enabled:
        images = cutout_batch(images, cfg.cutout, rng)
    if cfg.mixup.enabled:
        images, targets, _ = mixup_batch(images, targets, cfg.mixup, rng)
    return images, targets


def train_epoch(model: ResNet, train: Dataset, cfg: ExperimentConfig, opt: OptimizerState,
                epoch: int) -> tuple[float, float]:
    """One pass over ``train``; returns ``(mean loss, accuracy %)``."""
    params = list(model.parameters())
    rng = augment_rng(cfg.seed_augment, epoch)
    total_loss, correct, seen = 0.0, 0, 0
    for b, (x, y) in enumerate(batches(train, cfg.batch_size, cfg.seed_shuffle, epoch)):
        x, y = _augment(x, y, cfg, rng)
        try:
            logits = model.forward(x, train=True)
            loss, grad = softmax_cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise NumericFaultError("non-finite training loss")
        except NumericFaultError as exc:
            raise NumericFaultError(f"{exc} (epoch {epoch}, batch {b}, lr {opt.learning_rate})") \
                from exc
        model.zero_grad()
        model.backward(grad.astype(logits.dtype, copy=False))
        sgd_step(params, opt)
        n = x.shape[0]
        total_loss += loss * n
        correct += int((logits.argmax(axis=1) == y.argmax(axis=1)).sum())
        seen += n
    return total_loss / max(seen, 1), 100.0 * correct / max(seen, 1)


def _velocity_dict(model: ResNet, opt: OptimizerState) -> dict[str, np.ndarray]:
    if not opt.velocity:
        return {}
    return {name: v for (name, _), v in zip(model.named_parameters(), opt.velocity)}


def _restore_velocity(model: ResNet, saved: dict[str, np.ndarray]) -> list:
    if not saved:
        return []
    return [saved[name].astype(p.value.dtype) for name, p in model.named_parameters()]


def _read_metrics(path: Path, upto_epoch: int) -> list[str]:
    if not path.exists():
        return []
    lines = path.read_text().splitlines(keepends=True)
    return [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) < upto_epoch]


def _rewrite(path: Path, header: str, rows: list[str]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(header + "".join(rows))
    os.replace(tmp, path)


def _append(path: Path, row: str) -> None:
    with open(path, "a") as f:
        f.write(row)
        f.flush()


def planned_flops(cfg: ExperimentConfig) -> FlopReport:
    """Nominal cost of the model a config trains; data regularizers never enter."""
    if cfg.prune_enabled:
        return model_flops(cfg.spec, keep_ratio=cfg.prune.keep_ratio, scope=cfg.prune.scope)
    return model_flops(cfg.spec)


def current_mflops(cfg: ExperimentConfig, masks: dict | None) -> float:
    return model_flops(cfg.spec, masks=masks or None).megaflops


def run_experiment(cfg: ExperimentConfig, out_dir=None, resume: bool = True,
                   stop_after: int | None = None,
                   data: tuple[Dataset, Dataset] | None = None) -> RunResult | None:
    """Train one configuration end to end and return its :class:`RunResult`.

    With ``resume`` an existing checkpoint in ``out_dir`` whose config hash
    matches is continued from its epoch. ``stop_after=k`` stops once epoch
    ``k`` (0-based, inclusive) is trained and checkpointed, returning
    ``None``; a later call picks the run up again. ``data`` bypasses loading.
    """
    out = Path(out_dir or cfg.output_dir or "run")
    out.mkdir(parents=True, exist_ok=True)
    train, test = data if data is not None else load_data(cfg)
    chash = cfg.config_hash()
    ckpt_path = out / CHECKPOINT_FILE
    metrics_path, timing_path = out / METRICS_FILE, out / TIMING_FILE

    model = build_resnet(cfg.spec, cfg.seed_init)
    opt = OptimizerState(cfg.lr, cfg.momentum, cfg.weight_decay)
    masks: dict = {}
    start = 0
    if resume and ckpt_path.exists():
        ck = load_checkpoint(ckpt_path)
        if ck.meta.get("config_hash") == chash:
            model = ck.build_model()
            opt.velocity = _restore_velocity(model, ck.velocity())
            masks = ck.masks
            start = ck.epoch
            log.info("resuming %s from epoch %d", out, start)
        else:
            log.warning("ignoring checkpoint %s written by a different config", ckpt_path)
    _rewrite(metrics_path, ",".join(METRICS_COLUMNS) + "\n", _read_metrics(metrics_path, start))
    _rewrite(timing_path, "epoch,seconds\n", _read_metrics(timing_path, start))
    (out / "config.txt").write_text(dump_config(cfg))

    schedule = cfg.prune
    acc = None
    for epoch in range(start, cfg.epochs):
        t0 = time.perf_counter()
        if cfg.prune_enabled and epoch % schedule.frequency == 0:
            masks = apply_soft_prune(model, schedule, prune_rng(cfg.seed_prune, epoch))
        opt.learning_rate = cfg.lr_at(epoch)
        loss, acc = train_epoch(model, train, cfg, opt, epoch)
        last = epoch == cfg.epochs - 1
        test_acc = None
        if last or (cfg.eval_every and (epoch + 1) % cfg.eval_every == 0):
            test_acc = evaluate(model, test)
        rec = MetricsRecord(epoch, opt.learning_rate, float(loss), acc, test_acc,
                            current_mflops(cfg, masks), time.perf_counter() - t0)
        _append(metrics_path, rec.csv_row())
        _append(timing_path, f"{epoch},{rec.seconds:.3f}\n")
        stopping = stop_after is not None and epoch >= stop_after
        if stopping or (cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0):
            save_checkpoint(ckpt_path, model, cfg.seed_init, epoch + 1, masks,
                            _velocity_dict(model, opt), {"config_hash": chash})
        if stopping and not last:
            return None

    final = model
    nominal = None
    if cfg.prune_enabled:
        masks = apply_soft_prune(model, schedule, prune_rng(cfg.seed_prune, cfg.epochs))
        final = finalize_compact(model, schedule, masks).model
        nominal = round(model_flops(cfg.spec, keep_ratio=schedule.keep_ratio,
                                    scope=schedule.scope).megaflops, 2)
    else:
        nominal = round(model_flops(cfg.spec).megaflops, 2)
    final_path = out / "final.rpck"
    save_checkpoint(final_path, final, cfg.seed_init, cfg.epochs, masks, None,
                    {"config_hash": chash, "compact": cfg.prune_enabled})
    train_acc = evaluate(final, train) if acc is None else acc
    result = RunResult(
        method=cfg.method, depth=cfg.depth, accuracy=evaluate(final, test),
        mflops=round(model_cost(final).megaflops, 2), nominal_mflops=nominal,
        train_accuracy=train_acc, epochs=cfg.epochs, config_hash=chash,
        checkpoint=str(final_path))
    (out / RESULT_FILE).write_text(result.to_json())
    return result


def read_metrics(path) -> list[dict]:
    """Parse a ``metrics.csv`` into dicts of floats (``test_acc`` may be None)."""
    rows = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            rows.append({k: (None if v == "" else (int(v) if k == "epoch" else float(v)))
                         for k, v in r.items()})
    return rows
