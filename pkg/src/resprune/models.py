"""CIFAR ResNet family (depths 20/32/44/56/110) and compact-model extraction.

The network is the standard CIFAR ResNet: a 3x3 stem convolution with
batch norm, three stages of two-convolution basic blocks at widths
16/32/64 (stages two and three open with a stride-2 block), global average
pooling and a linear classifier. Shortcuts are parameter-free ("option A"):
identity, or stride-2 subsampling with zero-padded channels.

A compact model may drop output filters of *any* convolution. Dropping a
block's second convolution does not narrow the residual stream: the
remaining outputs are scattered back into the full-width stream before
the shortcut add (``BasicBlock.out_index``). Likewise a narrowed stem feeds
the first block's ``conv1`` directly while its shortcut sees the stem output
scattered to full width (``BasicBlock.in_index``).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .core import ops
from .core.nn import BatchNorm2d, Conv2d, GlobalAvgPool, Linear, Module, ReLU
from .errors import ConfigError, ContractViolation, DegenerateModelError, NumericFaultError

VALID_DEPTHS = (20, 32, 44, 56, 110)


@dataclass(frozen=True)
class ModelSpec:
    depth: int
    num_classes: int = 10
    stage_channels: tuple = (16, 32, 64)
    input_shape: tuple = (3, 32, 32)

    def __post_init__(self):
        if self.depth not in VALID_DEPTHS:
            raise ConfigError(f"invalid ResNet depth {self.depth!r}; valid depths: "
                              + ", ".join(map(str, VALID_DEPTHS)))

    @property
    def blocks_per_stage(self) -> int:
        return (self.depth - 2) // 6

    def to_dict(self) -> dict:
        return {"depth": self.depth, "num_classes": self.num_classes,
                "stage_channels": list(self.stage_channels),
                "input_shape": list(self.input_shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(depth=d["depth"], num_classes=d.get("num_classes", 10),
                   stage_channels=tuple(d.get("stage_channels", (16, 32, 64))),
                   input_shape=tuple(d.get("input_shape", (3, 32, 32))))


def conv_paths(spec: ModelSpec) -> list[str]:
    """Every convolution path of the architecture, in forward order."""
    paths = ["conv1"]
    for s in range(len(spec.stage_channels)):
        for b in range(spec.blocks_per_stage):
            paths += [f"layer{s + 1}.{b}.conv1", f"layer{s + 1}.{b}.conv2"]
    return paths


def _scatter(x: np.ndarray, index: np.ndarray, width: int) -> np.ndarray:
    full = np.zeros((x.shape[0], width) + x.shape[2:], dtype=x.dtype)
    full[:, index] = x
    return full


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    def __iter__(self):
        return iter(self._children.values())

    def __len__(self):
        return len(self._children)

    def __getitem__(self, i: int) -> Module:
        return self._children[str(i)]

    def forward(self, x, train=True):
        for layer in self:
            x = layer(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(list(self)):
            grad = layer.backward(grad)
        return grad


class BasicBlock(Module):
    """Two 3x3 conv/BN pairs plus an option-A shortcut.

    ``in_index`` (when set) says the input carries only those channels of a
    width-``in_planes`` stream; ``out_index`` says ``conv2`` produces only
    those channels of the width-``planes`` output.
    """

    def __init__(self, in_planes: int, planes: int, stride: int = 1, dtype=np.float32):
        super().__init__()
        self.in_planes = in_planes
        self.planes = planes
        self.stride = stride
        self.conv1 = Conv2d(in_planes, planes, 3, stride, 1, dtype=dtype)
        self.bn1 = BatchNorm2d(planes, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(planes, planes, 3, 1, 1, dtype=dtype)
        self.bn2 = BatchNorm2d(planes, dtype=dtype)
        self.in_index: np.ndarray | None = None
        self.out_index: np.ndarray | None = None

    @property
    def downsamples(self) -> bool:
        return self.stride != 1 or self.in_planes != self.planes

    def _shortcut(self, x: np.ndarray) -> np.ndarray:
        if self.in_index is not None:
            x = _scatter(x, self.in_index, self.in_planes)
        if not self.downsamples:
            return x
        lo = (self.planes - self.in_planes) // 2
        hi = self.planes - self.in_planes - lo
        sub = x[:, :, ::self.stride, ::self.stride]
        return np.pad(sub, ((0, 0), (lo, hi), (0, 0), (0, 0)))

    def _shortcut_backward(self, grad: np.ndarray, x_shape: tuple) -> np.ndarray:
        full_shape = (x_shape[0], self.in_planes) + tuple(x_shape[2:])
        if self.downsamples:
            lo = (self.planes - self.in_planes) // 2
            g = np.zeros(full_shape, dtype=grad.dtype)
            g[:, :, ::self.stride, ::self.stride] = grad[:, lo:lo + self.in_planes]
        else:
            g = grad
        if self.in_index is not None:
            g = g[:, self.in_index]
        return g

    def forward(self, x, train=True):
        self._x_shape = x.shape
        h = self.relu1(self.bn1(self.conv1(x, train), train), train)
        r = self.bn2(self.conv2(h, train), train)
        out = self._shortcut(x)
        if self.out_index is not None:
            if out is x:
                out = out.copy()
            out[:, self.out_index] += r
        else:
            out = out + r
        self._pre = out
        return ops.relu_forward(out)

    def backward(self, grad):
        g = ops.relu_backward(grad, self._pre)
        self._pre = None
        gr = g[:, self.out_index] if self.out_index is not None else g
        gh = self.conv2.backward(self.bn2.backward(gr))
        gx = self.conv1.backward(self.bn1.backward(self.relu1.backward(gh)))
        return gx + self._shortcut_backward(g, self._x_shape)


class ResNet(Module):
    def __init__(self, spec: ModelSpec, dtype=np.float32):
        super().__init__()
        self.spec = spec
        c0 = spec.stage_channels[0]
        self.conv1 = Conv2d(spec.input_shape[0], c0, 3, 1, 1, dtype=dtype)
        self.bn1 = BatchNorm2d(c0, dtype=dtype)
        self.relu = ReLU()
        in_planes = c0
        for s, planes in enumerate(spec.stage_channels):
            blocks = []
            for b in range(spec.blocks_per_stage):
                stride = 2 if (s > 0 and b == 0) else 1
                blocks.append(BasicBlock(in_planes, planes, stride, dtype=dtype))
                in_planes = planes
            setattr(self, f"layer{s + 1}", Sequential(*blocks))
        self.pool = GlobalAvgPool()
        self.linear = Linear(in_planes, spec.num_classes, dtype=dtype)
        # filled in by compaction: conv path -> kept output-filter indices
        self.kept: dict[str, np.ndarray] = {}

    @property
    def stages(self) -> list[Sequential]:
        return [getattr(self, f"layer{s + 1}") for s in range(len(self.spec.stage_channels))]

    def blocks(self) -> list[tuple[str, BasicBlock]]:
        return [(f"layer{s + 1}.{b}", blk) for s, stage in enumerate(self.stages)
                for b, blk in enumerate(stage)]

    def conv_bn_pairs(self) -> list[tuple[str, str]]:
        """(conv path, batch-norm path) for every convolution, in forward order."""
        pairs = [("conv1", "bn1")]
        for path, _ in self.blocks():
            pairs += [(f"{path}.conv1", f"{path}.bn1"), (f"{path}.conv2", f"{path}.bn2")]
        return pairs

    def module(self, path: str) -> Module:
        mod: Module = self
        for part in path.split("."):
            mod = mod._children[part]
        return mod

    @property
    def dtype(self):
        return self.conv1.weight.value.dtype

    def forward(self, x, train=True):
        c, h, w = self.spec.input_shape
        if x.ndim != 4 or x.shape[1:] != (c, h, w):
            raise ContractViolation(f"expected batch of shape (N, {c}, {h}, {w}), got {x.shape}")
        x = self.relu(self.bn1(self.conv1(x, train), train), train)
        _check_finite(x, "stem")
        for path, blk in self.blocks():
            x = blk(x, train)
            _check_finite(x, path)
        logits = self.linear(self.pool(x, train), train)
        _check_finite(logits, "linear")
        return logits

    def backward(self, grad):
        g = self.pool.backward(self.linear.backward(grad))
        for _, blk in reversed(self.blocks()):
            g = blk.backward(g)
        return self.conv1.backward(self.bn1.backward(self.relu.backward(g)))


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.isfinite(x).all():
        raise NumericFaultError(f"non-finite activation after layer '{where}'")


def build_resnet(spec: ModelSpec, init_seed: int, dtype=np.float32) -> ResNet:
    """Deterministically initialised ResNet.

    Convolutions and the classifier use He-normal fan-in scaling, batch
    norm starts at gamma=1, beta=0 and the classifier bias is zero.
    """
    model = ResNet(spec, dtype=dtype)
    rng = np.random.default_rng(init_seed)
    for name, p in model.named_parameters():
        if p.value.ndim in (2, 4):
            fan_in = int(np.prod(p.value.shape[1:]))
            p.value[...] = rng.standard_normal(p.value.shape) * np.sqrt(2.0 / fan_in)
    return model


def forward(model: ResNet, batch: np.ndarray, mode: str = "eval") -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ContractViolation(f"mode must be 'train' or 'eval', got {mode!r}")
    return model.forward(batch, train=(mode == "train"))


def parameter_count(model: Module) -> int:
    return int(sum(p.value.size for p in model.parameters()))


@dataclass
class CompactExtraction:
    source: ResNet
    masks: dict[str, np.ndarray]
    model: ResNet
    kept: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def keep_counts(self) -> dict[str, int]:
        return {path: int(idx.size) for path, idx in self.kept.items()}


def validate_masks(model: ResNet, masks: dict[str, np.ndarray]) -> None:
    convs = dict(model.conv_bn_pairs())
    for path, keep in masks.items():
        if path not in convs:
            raise ContractViolation(f"mask for unknown conv layer '{path}'")
        n = model.module(path).out_channels
        keep = np.asarray(keep)
        if keep.shape != (n,) or keep.dtype != bool:
            raise ContractViolation(
                f"mask for '{path}' must be a bool vector of length {n}, got "
                f"{keep.dtype} {keep.shape}")
        if not keep.any():
            raise DegenerateModelError(f"mask would leave '{path}' with 0 filters")


def _apply_structure(model: ResNet, kept: dict[str, np.ndarray]) -> None:
    """Physically slice ``model`` in place so that only ``kept`` filters remain."""
    pairs = dict(model.conv_bn_pairs())
    blocks = dict(model.blocks())
    for conv_path, idx in kept.items():
        conv = model.module(conv_path)
        bn = model.module(pairs[conv_path])
        conv.weight.value = conv.weight.value[idx].copy()
        conv.weight.zero_grad()
        for p in (bn.weight, bn.bias):
            p.value = p.value[idx].copy()
            p.zero_grad()
        bn.running_mean = bn.running_mean[idx].copy()
        bn.running_var = bn.running_var[idx].copy()
        if conv_path == "conv1":
            first = model.stages[0][0]
            first.conv1.weight.value = first.conv1.weight.value[:, idx].copy()
            first.conv1.weight.zero_grad()
            first.in_index = idx
        else:
            block_path, which = conv_path.rsplit(".", 1)
            blk = blocks[block_path]
            if which == "conv1":
                blk.conv2.weight.value = blk.conv2.weight.value[:, idx].copy()
                blk.conv2.weight.zero_grad()
            else:
                blk.out_index = idx
    model.kept = {k: np.asarray(v) for k, v in kept.items()}


def extract_compact(model: ResNet, masks: dict[str, np.ndarray]) -> CompactExtraction:
    """Remove masked filters (and their dependent channels) from a copy of ``model``.

    The result reproduces the output of ``model`` with the masks applied
    (zero filters, zero BN shift and running statistics). Layers whose mask
    keeps every filter are left untouched.
    """
    if model.kept:
        raise ContractViolation("extract_compact expects a full-width source model")
    validate_masks(model, masks)
    kept = {path: np.flatnonzero(np.asarray(keep)) for path, keep in masks.items()
            if not np.asarray(keep).all()}
    compact = copy.deepcopy(model)
    _apply_structure(compact, kept)
    return CompactExtraction(source=model, masks={k: np.asarray(v) for k, v in masks.items()},
                             model=compact, kept=kept)


def effective_channels(model: ResNet) -> list[tuple[str, int, int, int, int, int]]:
    """Per-layer ``(path, h_out, w_out, k, c_in, c_out)`` read off the actual weights.

    Spatial sizes follow the 32 -> 16 -> 8 schedule of the model's input shape.
    """
    _, h, w = model.spec.input_shape
    rows = [("conv1", h, w, model.conv1.kernel_size, model.conv1.in_channels,
             model.conv1.out_channels)]
    for path, blk in model.blocks():
        h = ops.conv_output_size(h, 3, blk.stride, 1)
        w = ops.conv_output_size(w, 3, blk.stride, 1)
        for name in ("conv1", "conv2"):
            conv = getattr(blk, name)
            rows.append((f"{path}.{name}", h, w, conv.kernel_size, conv.in_channels,
                         conv.out_channels))
    rows.append(("linear", 1, 1, 1, model.linear.in_features, model.spec.num_classes))
    return rows
