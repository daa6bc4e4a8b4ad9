"""Dense tensor kernels.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Image-like data
is stored channel-major, ``(C, H, W)`` for one sample and ``(N, C, H, W)``
for a batch, and flattened in row-major (C) order. Every kernel below accepts
either form and returns the matching form.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when tensor dimensions do not line up."""


class NonFiniteError(ValueError):
    """Raised when a tensor holds NaN or Inf."""


def make_shape(extents: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(e) for e in extents)
    if not shape:
        raise ShapeError("shape needs at least one extent")
    for axis, e in enumerate(shape):
        if e < 1:
            raise ShapeError(f"extent {axis} must be >= 1, got {e}")
    return shape


def check_finite(x: np.ndarray, name: str = "input") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return x


def tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Build a validated tensor from nested sequences or a flat buffer."""
    arr = np.array(data, dtype=DTYPE)
    if shape is not None:
        shape = make_shape(shape)
        if arr.size != int(np.prod(shape)):
            raise ShapeError(f"{arr.size} values do not fill shape {shape}")
        arr = arr.reshape(shape)
    else:
        make_shape(arr.shape)
    return check_finite(arr)


def _as_batch(x: np.ndarray, name: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{name} must be (C, H, W) or (N, C, H, W), got shape {x.shape}")


def conv_output_extent(extent: int, kernel: int, stride: int) -> int:
    return (extent - kernel) // stride + 1


def conv2d_valid(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid cross-correlation of ``x`` with ``kernels`` (O, C, Kh, Kw) plus bias."""
    xb, single = _as_batch(x, "input")
    kernels = np.asarray(kernels, dtype=DTYPE)
    bias = np.asarray(bias, dtype=DTYPE)
    if kernels.ndim != 4:
        raise ShapeError(f"kernels must be (O, C, Kh, Kw), got shape {kernels.shape}")
    out_ch, in_ch, kh, kw = kernels.shape
    _, c, h, w = xb.shape
    if c != in_ch:
        raise ShapeError(f"channel mismatch: input has {c} channels, kernels expect {in_ch}")
    if h < kh:
        raise ShapeError(f"height mismatch: input height {h} < kernel height {kh}")
    if w < kw:
        raise ShapeError(f"width mismatch: input width {w} < kernel width {kw}")
    if bias.shape != (out_ch,):
        raise ShapeError(f"bias must have shape ({out_ch},), got {bias.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    check_finite(xb, "input")

    windows = sliding_window_view(xb, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, H', W', O)
    out = np.tensordot(windows, kernels, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_backward(x: np.ndarray, kernels: np.ndarray, grad_out: np.ndarray, stride: int = 1):
    """Gradients of ``conv2d_valid`` w.r.t. input, kernels and bias."""
    xb, single = _as_batch(x, "input")
    gb = grad_out[None] if single else grad_out
    _, _, kh, kw = kernels.shape
    _, _, ho, wo = gb.shape

    windows = sliding_window_view(xb, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    grad_k = np.tensordot(gb, windows, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = gb.sum(axis=(0, 2, 3))

    grad_x = np.zeros_like(xb)
    for i in range(kh):
        for j in range(kw):
            # (N, O, H', W') x (O, C) -> (N, H', W', C)
            contrib = np.tensordot(gb, kernels[:, :, i, j], axes=([1], [0]))
            grad_x[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    return (grad_x[0] if single else grad_x), grad_k, grad_b


def maxpool2d(x: np.ndarray, window: int = 2, stride: int = 2):
    """Max pooling with per-output argmax.

    Returns ``(out, argmax)`` where ``argmax`` holds, for every output element,
    the flat row-major index into the per-sample ``(C, H, W)`` input of the
    selected maximum. Ties resolve to the lowest index.
    """
    xb, single = _as_batch(x, "input")
    _, c, h, w = xb.shape
    if window < 1 or stride < 1:
        raise ShapeError(f"window and stride must be >= 1, got {window}, {stride}")
    if h < window or w < window:
        raise ShapeError(f"window {window} larger than input {h}x{w}")
    check_finite(xb, "input")

    windows = sliding_window_view(xb, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    n, _, ho, wo = windows.shape[:4]
    flat = windows.reshape(n, c, ho, wo, window * window)
    local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]

    rows = np.arange(ho)[:, None] * stride + local // window
    cols = np.arange(wo)[None, :] * stride + local % window
    argmax = np.arange(c)[:, None, None] * (h * w) + rows * w + cols
    out = np.ascontiguousarray(out)
    if single:
        return out[0], argmax[0]
    return out, argmax


def maxpool2d_backward(grad_out: np.ndarray, argmax: np.ndarray, input_shape: Sequence[int]) -> np.ndarray:
    """Route each output gradient to the input position that won the max."""
    single = len(input_shape) == 3
    gb = grad_out[None] if single else grad_out
    ab = argmax[None] if single else argmax
    n = gb.shape[0]
    per_sample = int(np.prod(input_shape[-3:]))
    offsets = (np.arange(n) * per_sample).reshape(n, 1, 1, 1)
    grad = np.bincount((ab + offsets).ravel(), weights=gb.ravel(), minlength=n * per_sample)
    return grad.reshape(tuple(input_shape))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape[1]} vs {b.shape[0]}")
    return a @ b


_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "scale": np.multiply,
}


def elementwise(op: str, a: np.ndarray, b=None) -> np.ndarray:
    """Apply ``op`` per element.

    ``relu`` ignores ``b``. ``relu_grad`` treats ``a`` as the pre-activation
    and ``b`` as the upstream gradient.
    """
    a = np.asarray(a, dtype=DTYPE)
    if op == "relu":
        return np.maximum(a, 0.0)
    if b is None:
        raise ShapeError(f"{op} needs a second operand")
    b = np.asarray(b, dtype=DTYPE)
    if b.ndim != 0 and b.shape != a.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if op == "relu_grad":
        return np.where(a > 0, b, 0.0)
    try:
        fn = _BINARY[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)
