"""Functional forward/backward kernels for the CIFAR ResNet family.

Everything operates on plain ``numpy.ndarray`` values in NCHW layout.
Shapes are checked explicitly; apart from scalar-array arithmetic there
is no implicit broadcasting, so a wrong shape fails loudly with both
shapes in the message.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractViolation, DegenerateInputError

FLOAT_DTYPES = (np.float32, np.float64)


def _check_float(name: str, a: np.ndarray) -> None:
    if not isinstance(a, np.ndarray) or a.dtype.type not in FLOAT_DTYPES:
        raise ContractViolation(f"{name} must be a float32/float64 ndarray, got {type(a).__name__} "
                                f"{getattr(a, 'dtype', None)}")


def _check_ndim(name: str, a: np.ndarray, ndim: int) -> None:
    if a.ndim != ndim:
        raise ContractViolation(f"{name} must be {ndim}-D, got shape {a.shape}")


# ---------------------------------------------------------------------------
# convolution


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _check_conv(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> tuple[int, int]:
    _check_float("input", x)
    _check_float("weight", w)
    _check_ndim("input", x, 4)
    _check_ndim("weight", w, 4)
    if x.shape[1] != w.shape[1]:
        raise ContractViolation(
            f"conv2d channel mismatch: input shape {x.shape} vs weight shape {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise ContractViolation(f"conv2d expects square kernels, got weight shape {w.shape}")
    if stride < 1 or padding < 0:
        raise ContractViolation(f"invalid stride={stride} / padding={padding}")
    k = w.shape[2]
    ho = conv_output_size(x.shape[2], k, stride, padding)
    wo = conv_output_size(x.shape[3], k, stride, padding)
    if ho < 1 or wo < 1:
        raise ContractViolation(
            f"conv2d output would be empty: input shape {x.shape}, weight shape {w.shape}, "
            f"stride {stride}, padding {padding}")
    return ho, wo


def im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Unfold ``x`` into a ``(N*Ho*Wo, C*k*k)`` patch matrix."""
    n, c = x.shape[:2]
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)


def col2im(cols: np.ndarray, x_shape: tuple, k: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch gradients back onto the input."""
    n, c, h, w = x_shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    g = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            out[:, :, dy:dy + stride * (ho - 1) + 1:stride,
                dx:dx + stride * (wo - 1) + 1:stride] += g[:, :, dy, dx]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0,
                   cols: np.ndarray | None = None) -> np.ndarray:
    """Cross-correlation of ``x`` (NCHW) with ``w`` (OIKK), zero padded.

    ``cols`` may carry a precomputed :func:`im2col` of ``x`` so that a layer
    can reuse it in the backward pass.
    """
    ho, wo = _check_conv(x, w, stride, padding)
    n, o, k = x.shape[0], w.shape[0], w.shape[2]
    if cols is None:
        cols = im2col(x, k, stride, padding)
    out = cols @ w.reshape(o, -1).T
    return np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray, stride: int = 1,
                    padding: int = 0, cols: np.ndarray | None = None,
                    need_input_grad: bool = True) -> tuple[np.ndarray | None, np.ndarray]:
    """Return ``(grad_input, grad_weight)`` for :func:`conv2d_forward`."""
    ho, wo = _check_conv(x, w, stride, padding)
    o, k = w.shape[0], w.shape[2]
    if grad_out.shape != (x.shape[0], o, ho, wo):
        raise ContractViolation(
            f"conv2d grad_out shape {grad_out.shape} does not match forward output "
            f"{(x.shape[0], o, ho, wo)} (input {x.shape}, weight {w.shape})")
    if cols is None:
        cols = im2col(x, k, stride, padding)
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, o)
    grad_w = (g.T @ cols).reshape(w.shape)
    grad_x = None
    if need_input_grad:
        grad_x = col2im(g @ w.reshape(o, -1), x.shape, k, stride, padding)
    return grad_x, grad_w


# ---------------------------------------------------------------------------
# batch norm


class BNCache(NamedTuple):
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    train: bool


def batchnorm2d_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                        running_mean: np.ndarray, running_var: np.ndarray, train: bool,
                        momentum: float = 0.1, eps: float = 1e-5) -> tuple[np.ndarray, BNCache]:
    """Per-channel batch normalization.

    In train mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance for the running
    estimate). In eval mode the running statistics are used.
    """
    _check_float("input", x)
    _check_ndim("input", x, 4)
    c = x.shape[1]
    for name, a in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean),
                    ("running_var", running_var)):
        if a.shape != (c,):
            raise ContractViolation(f"batchnorm {name} shape {a.shape} != channel count ({c},)")
    m = x.shape[0] * x.shape[2] * x.shape[3]
    if m == 0:
        raise DegenerateInputError(f"batchnorm over zero batch*spatial elements, input {x.shape}")
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x - mean.astype(x.dtype)[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    return out, BNCache(xhat, inv_std, gamma, train)


def batchnorm2d_backward(grad_out: np.ndarray, cache: BNCache
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(grad_input, grad_gamma, grad_beta)``."""
    xhat, inv_std, gamma, train = cache
    if grad_out.shape != xhat.shape:
        raise ContractViolation(f"batchnorm grad shape {grad_out.shape} != {xhat.shape}")
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    scale = (gamma * inv_std)[None, :, None, None]
    if not train:
        return grad_out * scale, grad_gamma, grad_beta
    m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    grad_x = scale * (grad_out - (grad_beta / m)[None, :, None, None]
                      - xhat * (grad_gamma / m)[None, :, None, None])
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# pointwise, pooling, classifier


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    if grad_out.shape != x.shape:
        raise ContractViolation(f"relu grad shape {grad_out.shape} != input shape {x.shape}")
    return grad_out * (x > 0)


def global_avg_pool_forward(x: np.ndarray) -> np.ndarray:
    _check_ndim("input", x, 4)
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ContractViolation(f"global_avg_pool needs H, W >= 1, got {x.shape}")
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(grad_out: np.ndarray, x_shape: tuple) -> np.ndarray:
    n, c, h, w = x_shape
    if grad_out.shape != (n, c):
        raise ContractViolation(f"pool grad shape {grad_out.shape} != {(n, c)}")
    g = grad_out / (h * w)
    return np.broadcast_to(g[:, :, None, None], x_shape).copy()


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_ndim("input", x, 2)
    _check_ndim("weight", w, 2)
    if x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ContractViolation(
            f"linear shape mismatch: input {x.shape}, weight {w.shape}, bias {b.shape}")
    return x @ w.T + b


def linear_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(grad_input, grad_weight, grad_bias)``."""
    if grad_out.shape != (x.shape[0], w.shape[0]):
        raise ContractViolation(f"linear grad shape {grad_out.shape} != {(x.shape[0], w.shape[0])}")
    return grad_out @ w, grad_out.T @ x, grad_out.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray,
                          atol: float = 1e-6) -> tuple[float, np.ndarray]:
    """Mean soft-target cross entropy and its gradient w.r.t. ``logits``.

    ``targets`` rows must be probability distributions; mixup produces
    convex combinations of one-hot rows, which qualify.
    """
    _check_ndim("logits", logits, 2)
    if targets.shape != logits.shape:
        raise ContractViolation(f"target shape {targets.shape} != logits shape {logits.shape}")
    if (targets < 0).any() or not np.allclose(targets.sum(axis=1), 1.0, rtol=0, atol=atol):
        raise ContractViolation("each target row must be non-negative and sum to 1")
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_sum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_sum
    loss = float(-(targets * log_p).sum() / n)
    grad = (np.exp(log_p) - targets) / n
    return loss, grad.astype(logits.dtype, copy=False)
