"""Run configuration and its flat ``key = value`` file format.

One setting per line, dotted keys, ``#`` starts a comment::

    method = cutout_prune
    depth = 56
    lr_schedule = 100:0.1, 150:0.1
    prune.keep_ratio = 0.9

Unknown keys are rejected. See ``CONFIG_KEYS`` for the full schema.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..augment import CutoutConfig, MixupConfig
from ..errors import ConfigError
from ..models import VALID_DEPTHS, ModelSpec
from ..pruning import SCOPE_POLICIES, SELECTION_MODES, PruneSchedule

METHODS = ("control", "mixup", "cutout", "prune", "mixup_prune", "cutout_prune")
DATA_SOURCES = ("cifar10", "synthetic")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_str(text: str):
    text = text.strip()
    return None if text.lower() in ("", "none") else text


def _schedule(text: str) -> tuple:
    text = text.strip()
    if not text or text.lower() == "none":
        return ()
    steps = []
    for part in text.split(","):
        epoch, mult = part.split(":")
        steps.append((int(epoch), float(mult)))
    return tuple(sorted(steps))


# key -> (parser, description)
CONFIG_KEYS = {
    "method": (str, f"one of {', '.join(METHODS)}"),
    "depth": (int, f"ResNet depth, one of {', '.join(map(str, VALID_DEPTHS))}"),
    "epochs": (int, "training epochs (default 200)"),
    "lr": (float, "initial learning rate (default 0.1)"),
    "lr_schedule": (_schedule, "comma list of epoch:multiplier steps (default 100:0.1, 150:0.1)"),
    "momentum": (float, "SGD momentum (default 0.9)"),
    "weight_decay": (float, "L2 weight decay (default 5e-4)"),
    "batch_size": (int, "mini-batch size (default 128)"),
    "seed.init": (int, "weight initialisation seed"),
    "seed.augment": (int, "augmentation seed"),
    "seed.prune": (int, "pruning seed"),
    "seed.shuffle": (int, "batch shuffling seed"),
    "mixup.enabled": (_bool, "must agree with method (derived when omitted)"),
    "mixup.alpha": (float, "Beta(alpha, alpha) concentration (default 1.0)"),
    "cutout.enabled": (_bool, "must agree with method (derived when omitted)"),
    "cutout.size": (int, "square side in pixels (default 16)"),
    "prune.enabled": (_bool, "must agree with method (derived when omitted)"),
    "prune.keep_ratio": (float, "fraction of filters kept per layer (default 0.9)"),
    "prune.p": (float, "filter norm order (default 2)"),
    "prune.mode": (str, f"one of {', '.join(SELECTION_MODES)}"),
    "prune.scope": (str, f"one of {', '.join(SCOPE_POLICIES)}"),
    "prune.frequency": (int, "prune every N epochs (default 1)"),
    "augment.standard": (_bool, "pad-4 random crop + horizontal flip (default true)"),
    "data.source": (str, f"one of {', '.join(DATA_SOURCES)}"),
    "data.dir": (_optional_str, "CIFAR-10 binary directory"),
    "data.train_subset": (int, "use only the first N training records (0 = all)"),
    "data.test_subset": (int, "use only the first N test records (0 = all)"),
    "data.normalize": (_bool, "per-channel standardisation with train-split stats"),
    "data.synthetic_train": (int, "synthetic training samples"),
    "data.synthetic_test": (int, "synthetic test samples"),
    "data.synthetic_noise": (float, "synthetic blob noise scale"),
    "data.synthetic_seed": (int, "synthetic data seed"),
    "eval_every": (int, "evaluate the test split every N epochs (0 = final only)"),
    "checkpoint_every": (int, "checkpoint every N epochs (0 = never)"),
    "output.dir": (_optional_str, "run output directory"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "control"
    depth: int = 20
    epochs: int = 200
    lr: float = 0.1
    lr_schedule: tuple = ((100, 0.1), (150, 0.1))
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    seed_init: int = 0
    seed_augment: int = 1
    seed_prune: int = 2
    seed_shuffle: int = 3
    mixup: MixupConfig = field(default_factory=lambda: MixupConfig(enabled=False))
    cutout: CutoutConfig = field(default_factory=lambda: CutoutConfig(enabled=False))
    prune_enabled: bool = False
    prune: PruneSchedule = field(default_factory=PruneSchedule)
    standard_augment: bool = True
    data_source: str = "cifar10"
    data_dir: str | None = None
    train_subset: int = 0
    test_subset: int = 0
    normalize: bool = True
    synthetic_train: int = 128
    synthetic_test: int = 128
    synthetic_noise: float = 1.0
    synthetic_seed: int = 0
    eval_every: int = 1
    checkpoint_every: int = 1
    output_dir: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method: unknown method {self.method!r}; choose from "
                              + ", ".join(METHODS), key="method")
        ModelSpec(self.depth)
        for key, val, lo in (("epochs", self.epochs, 0), ("batch_size", self.batch_size, 1),
                             ("eval_every", self.eval_every, 0),
                             ("checkpoint_every", self.checkpoint_every, 0)):
            if val < lo:
                raise ConfigError(f"{key}: must be >= {lo}, got {val}", key=key)
        if self.lr <= 0:
            raise ConfigError(f"lr: must be > 0, got {self.lr}", key="lr")
        if self.data_source not in DATA_SOURCES:
            raise ConfigError(f"data.source: choose from {', '.join(DATA_SOURCES)}",
                              key="data.source")
        want = {"mixup": "mixup" in self.method, "cutout": "cutout" in self.method,
                "prune": "prune" in self.method}
        have = {"mixup": self.mixup.enabled, "cutout": self.cutout.enabled,
                "prune": self.prune_enabled}
        for name in want:
            if want[name] != have[name]:
                raise ConfigError(f"{name}.enabled={have[name]} contradicts method "
                                  f"{self.method!r}", key=f"{name}.enabled")

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.depth)

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for start, mult in self.lr_schedule:
            if epoch >= start:
                lr *= mult
        return lr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_schedule"] = [list(s) for s in self.lr_schedule]
        return d

    def config_hash(self) -> str:
        """Hash of everything that influences results (paths excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("data_dir")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    @classmethod
    def for_method(cls, method: str, **kw) -> "ExperimentConfig":
        return from_mapping({"method": method}, **kw)


def parse_config_text(text: str) -> dict[str, str]:
    """Split a config file into raw ``{key: value}`` strings; rejects unknown keys."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key '{key}' (line {lineno})", key=key)
        raw[key] = value
    return raw


def from_mapping(raw: dict, **overrides) -> ExperimentConfig:
    """Build a config from dotted-key values (strings or already-typed values)."""
    vals = {}
    for key, value in raw.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key '{key}'", key=key)
        parser = CONFIG_KEYS[key][0]
        try:
            vals[key] = parser(value) if isinstance(value, str) else value
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for '{key}': {value!r} ({exc})", key=key) from exc
    method = vals.get("method", "control")
    if method not in METHODS:
        raise ConfigError(f"method: unknown method {method!r}; choose from " + ", ".join(METHODS),
                          key="method")

    def get(key, default):
        return vals.get(key, default)

    try:
        mixup = MixupConfig(alpha=get("mixup.alpha", 1.0),
                            enabled=get("mixup.enabled", "mixup" in method))
        cutout = CutoutConfig(size=get("cutout.size", 16),
                              enabled=get("cutout.enabled", "cutout" in method))
        prune = PruneSchedule(keep_ratio=get("prune.keep_ratio", 0.9), p_norm=get("prune.p", 2.0),
                              selection_mode=get("prune.mode", "smallest_norm"),
                              scope=get("prune.scope", "all"),
                              frequency=get("prune.frequency", 1))
    except ConfigError as exc:
        raise ConfigError(str(exc), key=getattr(exc, "key", None)) from exc
    base = ExperimentConfig
    kwargs = dict(
        method=method,
        depth=get("depth", 20),
        epochs=get("epochs", 200),
        lr=get("lr", 0.1),
        lr_schedule=get("lr_schedule", base.lr_schedule),
        momentum=get("momentum", 0.9),
        weight_decay=get("weight_decay", 5e-4),
        batch_size=get("batch_size", 128),
        seed_init=get("seed.init", 0),
        seed_augment=get("seed.augment", 1),
        seed_prune=get("seed.prune", 2),
        seed_shuffle=get("seed.shuffle", 3),
        mixup=mixup,
        cutout=cutout,
        prune_enabled=get("prune.enabled", "prune" in method),
        prune=prune,
        standard_augment=get("augment.standard", True),
        data_source=get("data.source", "cifar10"),
        data_dir=get("data.dir", None),
        train_subset=get("data.train_subset", 0),
        test_subset=get("data.test_subset", 0),
        normalize=get("data.normalize", True),
        synthetic_train=get("data.synthetic_train", 128),
        synthetic_test=get("data.synthetic_test", 128),
        synthetic_noise=get("data.synthetic_noise", 1.0),
        synthetic_seed=get("data.synthetic_seed", 0),
        eval_every=get("eval_every", 1),
        checkpoint_every=get("checkpoint_every", 1),
        output_dir=get("output.dir", None),
    )
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    return from_mapping(parse_config_text(text))


def dump_config(cfg: ExperimentConfig) -> str:
    """Render ``cfg`` back into the key-value format (round-trips through :func:`load_config`)."""
    sched = ", ".join(f"{e}:{m!r}" for e, m in cfg.lr_schedule) or "none"
    rows = {
        "method": cfg.method, "depth": cfg.depth, "epochs": cfg.epochs, "lr": repr(cfg.lr),
        "lr_schedule": sched, "momentum": repr(cfg.momentum),
        "weight_decay": repr(cfg.weight_decay), "batch_size": cfg.batch_size,
        "seed.init": cfg.seed_init, "seed.augment": cfg.seed_augment,
        "seed.prune": cfg.seed_prune, "seed.shuffle": cfg.seed_shuffle,
        "mixup.enabled": str(cfg.mixup.enabled).lower(), "mixup.alpha": repr(cfg.mixup.alpha),
        "cutout.enabled": str(cfg.cutout.enabled).lower(), "cutout.size": cfg.cutout.size,
        "prune.enabled": str(cfg.prune_enabled).lower(),
        "prune.keep_ratio": repr(cfg.prune.keep_ratio), "prune.p": repr(cfg.prune.p_norm),
        "prune.mode": cfg.prune.selection_mode, "prune.scope": cfg.prune.scope,
        "prune.frequency": cfg.prune.frequency,
        "augment.standard": str(cfg.standard_augment).lower(),
        "data.source": cfg.data_source, "data.dir": cfg.data_dir or "none",
        "data.train_subset": cfg.train_subset, "data.test_subset": cfg.test_subset,
        "data.normalize": str(cfg.normalize).lower(),
        "data.synthetic_train": cfg.synthetic_train, "data.synthetic_test": cfg.synthetic_test,
        "data.synthetic_noise": repr(cfg.synthetic_noise),
        "data.synthetic_seed": cfg.synthetic_seed,
        "eval_every": cfg.eval_every, "checkpoint_every": cfg.checkpoint_every,
        "output.dir": cfg.output_dir or "none",
    }
    return "".join(f"{k} = {v}\n" for k, v in rows.items())
