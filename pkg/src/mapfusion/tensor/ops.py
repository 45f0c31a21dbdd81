"""Forward/backward primitives on dense (n, c, h, w) arrays.

Tensors are plain numpy arrays. Every function here is pure: outputs are
freshly allocated and inputs are never written. Results keep the floating
dtype of their first argument, so the same code runs in float32 for training
and float64 for finite-difference checks.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ContractError

DEFAULT_DTYPE = np.float32
BCE_EPS = 1e-7
CONV_SIZES = (1, 3, 5, 7)


def tensor(data, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Coerce ``data`` into a rank-4 floating array."""
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim != 4:
        raise ContractError(f"tensor must be rank 4 (n, c, h, w), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError("tensor values must be finite")
    return arr


def _float_dtype(x: np.ndarray):
    return x.dtype if x.dtype in (np.float32, np.float64) else np.dtype(DEFAULT_DTYPE)


def check_rank4(x: np.ndarray, name: str = "input") -> None:
    if x.ndim != 4:
        raise ContractError(f"{name} must be rank 4 (n, c, h, w), got shape {x.shape}")


# --------------------------------------------------------------------------
# convolution (direct, im2col)
# --------------------------------------------------------------------------

def _check_conv(x, kernel, bias):
    check_rank4(x)
    if kernel.ndim != 4:
        raise ContractError(f"kernel must be (cout, cin, k, k), got shape {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ContractError(f"kernel must be square with odd size, got {kh}x{kw}")
    if x.shape[1] != cin:
        raise ContractError(f"input channels {x.shape[1]} != kernel cin {cin}")
    if bias is not None and np.shape(bias) != (cout,):
        raise ContractError(f"bias shape {np.shape(bias)} != (cout,) = ({cout},)")
    return cout, cin, kh


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Rows ordered (ki, kj, c); columns ordered (n, h, w)."""
    n, c, h, w = x.shape
    if k == 1:
        return x.transpose(1, 0, 2, 3).reshape(c, n * h * w)
    p = (k - 1) // 2
    xt = np.pad(x.transpose(1, 0, 2, 3), ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((k, k, c, n, h, w), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[i, j] = xt[:, :, i:i + h, j:j + w]
    return cols.reshape(k * k * c, n * h * w)


def _col2im(cols: np.ndarray, shape, k: int) -> np.ndarray:
    n, c, h, w = shape
    if k == 1:
        return cols.reshape(c, n, h, w).transpose(1, 0, 2, 3).copy()
    p = (k - 1) // 2
    cols = cols.reshape(k, k, c, n, h, w)
    acc = np.zeros((c, n, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            acc[:, :, i:i + h, j:j + w] += cols[i, j]
    return acc[:, :, p:p + h, p:p + w].transpose(1, 0, 2, 3).copy()


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Stride-1 "same" cross-correlation with zero padding (k-1)/2."""
    cout, cin, k = _check_conv(x, kernel, bias)
    dtype = _float_dtype(x)
    x = x.astype(dtype, copy=False)
    n, _, h, w = x.shape
    wm = kernel.astype(dtype, copy=False).transpose(0, 2, 3, 1).reshape(cout, k * k * cin)
    out = (wm @ _im2col(x, k)).reshape(cout, n, h, w).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.astype(dtype, copy=False)[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray):
    """Return ``(grad_input, grad_kernel, grad_bias)`` for :func:`conv2d`."""
    cout, cin, k = _check_conv(x, kernel, None)
    n, _, h, w = x.shape
    if grad_out.shape != (n, cout, h, w):
        raise ContractError(f"grad_out shape {grad_out.shape} != forward output {(n, cout, h, w)}")
    dtype = _float_dtype(x)
    x = x.astype(dtype, copy=False)
    g = grad_out.astype(dtype, copy=False).transpose(1, 0, 2, 3).reshape(cout, n * h * w)
    wm = kernel.astype(dtype, copy=False).transpose(0, 2, 3, 1).reshape(cout, k * k * cin)
    cols = _im2col(x, k)
    grad_kernel = (g @ cols.T).reshape(cout, k, k, cin).transpose(0, 3, 1, 2)
    grad_input = _col2im(wm.T @ g, x.shape, k)
    grad_bias = grad_out.astype(dtype, copy=False).sum(axis=(0, 2, 3))
    return grad_input, np.ascontiguousarray(grad_kernel), grad_bias


# --------------------------------------------------------------------------
# 3x3 pooling, stride 1
# --------------------------------------------------------------------------

def _pad1(x: np.ndarray, fill: float) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=fill)


def pool3(x: np.ndarray, mode: str = "avg") -> np.ndarray:
    """3x3 pooling with output size equal to input size.

    ``avg`` zero-pads and always divides by 9; ``max`` ignores padding.
    """
    check_rank4(x)
    dtype = _float_dtype(x)
    x = x.astype(dtype, copy=False)
    h, w = x.shape[-2:]
    if mode == "avg":
        xp = _pad1(x, 0)
        rows = xp[:, :, :, 0:w] + xp[:, :, :, 1:w + 1] + xp[:, :, :, 2:w + 2]
        return (rows[:, :, 0:h] + rows[:, :, 1:h + 1] + rows[:, :, 2:h + 2]) / dtype.type(9)
    if mode == "max":
        xp = _pad1(x, -np.inf)
        rows = np.maximum(np.maximum(xp[:, :, :, 0:w], xp[:, :, :, 1:w + 1]), xp[:, :, :, 2:w + 2])
        return np.maximum(np.maximum(rows[:, :, 0:h], rows[:, :, 1:h + 1]), rows[:, :, 2:h + 2])
    raise ContractError(f"unknown pooling mode {mode!r}")


def pool3_backward(x: np.ndarray, grad_out: np.ndarray, mode: str = "avg",
                   out: np.ndarray | None = None) -> np.ndarray:
    """Gradient of :func:`pool3` w.r.t. its input.

    For ``max`` the gradient goes to the first maximal element of each window
    in row-major order. ``out`` may carry the forward result to skip
    recomputing it.
    """
    check_rank4(x)
    if grad_out.shape != x.shape:
        raise ContractError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    dtype = _float_dtype(x)
    if mode == "avg":
        # box filter with zero padding is self-adjoint
        return pool3(grad_out.astype(dtype, copy=False), "avg")
    if mode != "max":
        raise ContractError(f"unknown pooling mode {mode!r}")
    x = x.astype(dtype, copy=False)
    h, w = x.shape[-2:]
    mx = pool3(x, "max") if out is None else out
    xp = _pad1(x, -np.inf)
    g = grad_out.astype(dtype, copy=False)
    acc = np.zeros(xp.shape, dtype)
    free = np.ones(x.shape, bool)
    hit = np.empty(x.shape, bool)
    tmp = np.empty(x.shape, dtype)
    # row-major window scan; each output claims its first maximal position
    for o in range(9):
        i, j = divmod(o, 3)
        np.equal(xp[:, :, i:i + h, j:j + w], mx, out=hit)
        hit &= free
        free ^= hit                                               # hit is a subset of free
        np.multiply(g, hit, out=tmp)
        acc[:, :, i:i + h, j:j + w] += tmp
    return np.ascontiguousarray(acc[:, :, 1:h + 1, 1:w + 1])


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(_float_dtype(x), copy=False)


def sigmoid_backward(out: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient given the *output* of :func:`sigmoid`."""
    return grad_out * out * (1 - out)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def softmax(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    z = np.exp(v - v.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_backward(s: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient given the *output* ``s`` of :func:`softmax`."""
    return s * (grad_out - (grad_out * s).sum(axis=-1, keepdims=True))


# --------------------------------------------------------------------------
# dense
# --------------------------------------------------------------------------

def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map ``x @ weights.T + bias``; ``x`` is ``(in,)`` or ``(n, in)``."""
    x = np.asarray(x)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[1]:
        raise ContractError(f"input dim {x.shape[-1]} does not match weights {weights.shape}")
    if bias.shape != (weights.shape[0],):
        raise ContractError(f"bias shape {bias.shape} != ({weights.shape[0]},)")
    return x @ weights.T + bias


def dense_backward(x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray):
    """Return ``(grad_input, grad_weights, grad_bias)``."""
    x = np.asarray(x)
    if grad_out.shape[-1] != weights.shape[0] or grad_out.shape[:-1] != x.shape[:-1]:
        raise ContractError(f"grad_out shape {grad_out.shape} inconsistent with input {x.shape} "
                            f"and weights {weights.shape}")
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, grad_out.shape[-1])
    return grad_out @ weights, g2.T @ x2, g2.sum(axis=0)


# --------------------------------------------------------------------------
# channel concat
# --------------------------------------------------------------------------

def concat_channels(tensors: Sequence[np.ndarray]) -> np.ndarray:
    if not tensors:
        raise ContractError("concat_channels needs at least one tensor")
    for t in tensors:
        check_rank4(t)
    ref = tensors[0].shape
    for i, t in enumerate(tensors[1:], start=1):
        if (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ContractError(f"tensor {i} has (n, h, w) = {(t.shape[0],) + t.shape[2:]}, "
                                f"expected {(ref[0],) + ref[2:]}")
    return np.concatenate(tensors, axis=1)


def split_backward(grad_out: np.ndarray, channels: Sequence[int]) -> list[np.ndarray]:
    """Slice a concatenated gradient back into per-input gradients."""
    if sum(channels) != grad_out.shape[1]:
        raise ContractError(f"channel counts {list(channels)} do not sum to {grad_out.shape[1]}")
    edges = np.cumsum(channels)[:-1]
    return [part.copy() for part in np.split(grad_out, edges, axis=1)]


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def bce_loss(pred: np.ndarray, target: np.ndarray, eps: float = BCE_EPS):
    """Mean pixel-wise binary cross-entropy and its gradient w.r.t. ``pred``.

    ``pred`` is clamped to ``[eps, 1 - eps]`` before the logarithm; where the
    clamp is active the returned gradient is zero. The mean is accumulated in
    float64 and returned as a Python float.
    """
    if pred.shape != target.shape:
        raise ContractError(f"pred shape {pred.shape} != target shape {target.shape}")
    p64 = pred.astype(np.float64)
    y = target.astype(np.float64)
    p = np.clip(p64, eps, 1 - eps)
    loss = float(np.mean(-(y * np.log(p) + (1 - y) * np.log1p(-p))))
    inside = (p64 >= eps) & (p64 <= 1 - eps)
    grad = np.where(inside, (p - y) / (p * (1 - p)), 0.0) / p.size
    return loss, grad.astype(_float_dtype(pred), copy=False)
