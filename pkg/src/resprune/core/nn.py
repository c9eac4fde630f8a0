"""Layer objects with explicit forward/backward passes.

A :class:`Module` owns named :class:`Parameter` objects, named buffers
(non-trainable state such as batch-norm running statistics) and child
modules. ``forward`` caches what ``backward`` needs; ``backward`` adds
into each parameter's ``grad`` and returns the gradient w.r.t. the input.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops


class Parameter:
    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value: np.ndarray, requires_grad: bool = True):
        self.value = value
        self.grad = np.zeros_like(value)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        if self.grad.shape != self.value.shape:
            self.grad = np.zeros_like(self.value)
        else:
            self.grad.fill(0)

    def __repr__(self):
        return f"Parameter(shape={self.value.shape}, dtype={self.value.dtype})"


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = None
        object.__setattr__(self, name, value)

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        for path, mod in self.named_modules():
            for name, p in mod._params.items():
                yield (f"{path}.{name}" if path else name), p

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for path, mod in self.named_modules():
            for name in mod._buffers:
                yield (f"{path}.{name}" if path else name), getattr(mod, name)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: p.value for k, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        extra = set(state) - (set(params) | set(buffers))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for key, p in params.items():
            if state[key].shape != p.value.shape:
                raise ValueError(f"{key}: shape {state[key].shape} != {p.value.shape}")
            p.value[...] = state[key]
        for key, b in buffers.items():
            b[...] = state[key]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype) -> "Module":
        """Cast all parameters and buffers in place; returns ``self``."""
        for _, mod in self.named_modules():
            for p in mod._params.values():
                p.value = p.value.astype(dtype)
                p.grad = np.zeros_like(p.value)
            for name in mod._buffers:
                object.__setattr__(mod, name, getattr(mod, name).astype(dtype))
        return self

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, train: bool = True):
        return self.forward(x, train)


class Conv2d(Module):
    """Bias-free square-kernel convolution."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: int = 1, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(np.zeros((out_channels, in_channels, kernel_size, kernel_size),
                                         dtype=dtype))
        self._x = None

    @property
    def in_channels(self) -> int:
        return self.weight.value.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.value.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.weight.value.shape[2]

    def forward(self, x, train=True):
        self._x = x
        return ops.conv2d_forward(x, self.weight.value, self.stride, self.padding)

    def backward(self, grad):
        gx, gw = ops.conv2d_backward(grad, self._x, self.weight.value, self.stride, self.padding)
        if self.weight.requires_grad:
            self.weight.grad += gw
        self._x = None
        return gx


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        self._cache = None

    @property
    def channels(self) -> int:
        return self.weight.value.shape[0]

    def forward(self, x, train=True):
        out, self._cache = ops.batchnorm2d_forward(
            x, self.weight.value, self.bias.value, self.running_mean, self.running_var,
            train, self.momentum, self.eps)
        return out

    def backward(self, grad):
        gx, gg, gb = ops.batchnorm2d_backward(grad, self._cache)
        if self.weight.requires_grad:
            self.weight.grad += gg
        if self.bias.requires_grad:
            self.bias.grad += gb
        self._cache = None
        return gx


class ReLU(Module):
    def forward(self, x, train=True):
        self._x = x
        return ops.relu_forward(x)

    def backward(self, grad):
        return ops.relu_backward(grad, self._x)


class GlobalAvgPool(Module):
    def forward(self, x, train=True):
        self._shape = x.shape
        return ops.global_avg_pool_forward(x)

    def backward(self, grad):
        return ops.global_avg_pool_backward(grad, self._shape)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, dtype=np.float32):
        super().__init__()
        self.weight = Parameter(np.zeros((out_features, in_features), dtype=dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    @property
    def in_features(self) -> int:
        return self.weight.value.shape[1]

    def forward(self, x, train=True):
        self._x = x
        return ops.linear_forward(x, self.weight.value, self.bias.value)

    def backward(self, grad):
        gx, gw, gb = ops.linear_backward(grad, self._x, self.weight.value)
        if self.weight.requires_grad:
            self.weight.grad += gw
        if self.bias.requires_grad:
            self.bias.grad += gb
        return gx
