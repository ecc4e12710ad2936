"""Layer specifications and their forward/backward kernels (NHWC layout).

Kernels are dtype-generic: they compute in whatever float dtype the
inputs carry, which lets gradient checks run a binary64 shadow copy of a
binary32 model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np


@dataclass(frozen=True)
class Conv2D:
    kh: int
    kw: int
    cin: int
    cout: int
    stride: int = 1
    padding: str = "same"

    def param_shapes(self):
        return [(self.kh, self.kw, self.cin, self.cout), (self.cout,)]

    def output_shape(self, shape):
        h, w, c = shape
        if c != self.cin:
            raise ValueError(f"Conv2D expects {self.cin} input channels, got {c}")
        oh = conv_geometry(h, self.kh, self.stride, self.padding)[0]
        ow = conv_geometry(w, self.kw, self.stride, self.padding)[0]
        return (oh, ow, self.cout)


@dataclass(frozen=True)
class DepthwiseConv2D:
    kh: int
    kw: int
    channels: int
    stride: int = 1
    padding: str = "same"

    def param_shapes(self):
        return [(self.kh, self.kw, self.channels), (self.channels,)]

    def output_shape(self, shape):
        h, w, c = shape
        if c != self.channels:
            raise ValueError(f"DepthwiseConv2D expects {self.channels} channels, got {c}")
        oh = conv_geometry(h, self.kh, self.stride, self.padding)[0]
        ow = conv_geometry(w, self.kw, self.stride, self.padding)[0]
        return (oh, ow, c)


@dataclass(frozen=True)
class Dense:
    units_in: int
    units_out: int

    def param_shapes(self):
        return [(self.units_in, self.units_out), (self.units_out,)]

    def output_shape(self, shape):
        if tuple(shape) != (self.units_in,):
            raise ValueError(f"Dense expects input ({self.units_in},), got {shape}")
        return (self.units_out,)


@dataclass(frozen=True)
class Pool:
    kind: str = "max"  # "max" | "global_avg"
    window: int = 2
    stride: int = 2

    def __post_init__(self):
        if self.kind not in ("max", "global_avg"):
            raise ValueError(f"unknown pool kind {self.kind!r}")

    def param_shapes(self):
        return []

    def output_shape(self, shape):
        h, w, c = shape
        if self.kind == "global_avg":
            return (c,)
        if self.window > h or self.window > w:
            raise ValueError(f"pool window {self.window} larger than input {h}x{w}")
        return ((h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1, c)


@dataclass(frozen=True)
class Activation:
    kind: str = "relu"  # "relu" | "relu6"

    def __post_init__(self):
        if self.kind not in ("relu", "relu6"):
            raise ValueError(f"unknown activation {self.kind!r}")

    def param_shapes(self):
        return []

    def output_shape(self, shape):
        return tuple(shape)


@dataclass(frozen=True)
class Dropout:
    rate: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")

    def param_shapes(self):
        return []

    def output_shape(self, shape):
        return tuple(shape)


@dataclass(frozen=True)
class Flatten:
    def param_shapes(self):
        return []

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


@dataclass(frozen=True)
class Softmax:
    def param_shapes(self):
        return []

    def output_shape(self, shape):
        return tuple(shape)


LayerSpec = Union[Conv2D, DepthwiseConv2D, Dense, Pool, Activation, Dropout, Flatten, Softmax]
PARAMETRIC = (Conv2D, DepthwiseConv2D, Dense)


def conv_geometry(size: int, k: int, stride: int, padding: str) -> Tuple[int, int, int]:
    """Return (output size, pad before, pad after) along one axis."""
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + k - size, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        if k > size:
            raise ValueError(f"kernel {k} larger than input {size} with valid padding")
        return (size - k) // stride + 1, 0, 0
    raise ValueError(f"unknown padding {padding!r}")


def _pad(x, kh, kw, stride, padding):
    _, h, w, _ = x.shape
    oh, pt, pb = conv_geometry(h, kh, stride, padding)
    ow, pl, pr = conv_geometry(w, kw, stride, padding)
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    return x, oh, ow, (pt, pb, pl, pr)


def _windows(xp, kh, kw, stride, oh, ow):
    """Yield (i, j, strided view) for every kernel offset."""
    for i in range(kh):
        for j in range(kw):
            yield i, j, xp[:, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride, :]


def _im2col(xp, kh, kw, stride, oh, ow):
    cols = np.stack([v for _, _, v in _windows(xp, kh, kw, stride, oh, ow)], axis=3)
    n, c = xp.shape[0], xp.shape[3]
    return cols.reshape(n * oh * ow, kh * kw * c)


def conv2d_forward(x, w, b, stride=1, padding="same"):
    """Cross-correlation of NHWC ``x`` with ``w[kh, kw, cin, cout]``."""
    x = np.asarray(x)
    kh, kw, cin, cout = w.shape
    if x.ndim != 4 or x.shape[3] != cin:
        raise ValueError(f"input shape {x.shape} incompatible with kernel {w.shape}")
    if b.shape != (cout,):
        raise ValueError(f"bias shape {b.shape} != ({cout},)")
    xp, oh, ow, _ = _pad(x, kh, kw, stride, padding)
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    y = cols @ w.reshape(kh * kw * cin, cout) + b
    return y.reshape(x.shape[0], oh, ow, cout)


def conv2d_backward(x, w, dy, stride=1, padding="same"):
    kh, kw, cin, cout = w.shape
    xp, oh, ow, (pt, pb, pl, pr) = _pad(np.asarray(x), kh, kw, stride, padding)
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    dy2 = dy.reshape(-1, cout)
    dw = (cols.T @ dy2).reshape(w.shape)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ w.reshape(kh * kw * cin, cout).T).reshape(x.shape[0], oh, ow, kh * kw, cin)
    dxp = np.zeros_like(xp)
    for idx, (i, j, view) in enumerate(_windows(dxp, kh, kw, stride, oh, ow)):
        view += dcols[:, :, :, idx, :]
    dx = dxp[:, pt:dxp.shape[1] - pb, pl:dxp.shape[2] - pr, :]
    return dx, dw, db


def depthwise_conv2d_forward(x, w, b, stride=1, padding="same"):
    """Per-channel spatial convolution with ``w[kh, kw, channels]``."""
    x = np.asarray(x)
    kh, kw, c = w.shape
    if x.ndim != 4 or x.shape[3] != c:
        raise ValueError(f"input shape {x.shape} incompatible with depthwise kernel {w.shape}")
    if b.shape != (c,):
        raise ValueError(f"bias shape {b.shape} != ({c},)")
    xp, oh, ow, _ = _pad(x, kh, kw, stride, padding)
    y = np.zeros((x.shape[0], oh, ow, c), dtype=np.result_type(x, w))
    for i, j, view in _windows(xp, kh, kw, stride, oh, ow):
        y += view * w[i, j]
    return y + b


def depthwise_conv2d_backward(x, w, dy, stride=1, padding="same"):
    kh, kw, c = w.shape
    xp, oh, ow, (pt, pb, pl, pr) = _pad(np.asarray(x), kh, kw, stride, padding)
    dw = np.zeros_like(w)
    for i, j, view in _windows(xp, kh, kw, stride, oh, ow):
        dw[i, j] = (view * dy).sum(axis=(0, 1, 2))
    db = dy.sum(axis=(0, 1, 2))
    dxp = np.zeros_like(xp)
    for i, j, view in _windows(dxp, kh, kw, stride, oh, ow):
        view += dy * w[i, j]
    dx = dxp[:, pt:dxp.shape[1] - pb, pl:dxp.shape[2] - pr, :]
    return dx, dw, db


def dense_forward(x, w, b):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"dense shapes x{x.shape} W{w.shape} b{b.shape} disagree")
    return x @ w + b


def dense_backward(x, w, dy):
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def maxpool_forward(x, window=2, stride=2):
    """Valid max pooling; returns (output, argmax index within each window)."""
    n, h, w, c = x.shape
    if window > h or window > w:
        raise ValueError(f"pool window {window} larger than input {h}x{w}")
    oh, ow = (h - window) // stride + 1, (w - window) // stride + 1
    stacked = np.stack([v for _, _, v in _windows(x, window, window, stride, oh, ow)], axis=3)
    arg = stacked.argmax(axis=3)
    out = np.take_along_axis(stacked, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return out, arg


def maxpool_backward(x_shape, arg, dy, window=2, stride=2):
    dx = np.zeros(x_shape, dtype=dy.dtype)
    oh, ow = dy.shape[1], dy.shape[2]
    for idx, (_, _, view) in enumerate(_windows(dx, window, window, stride, oh, ow)):
        view += np.where(arg == idx, dy, 0)
    return dx


def global_avg_pool_forward(x):
    return x.mean(axis=(1, 2))


def global_avg_pool_backward(x_shape, dy):
    n, h, w, c = x_shape
    return np.broadcast_to(dy[:, None, None, :] / (h * w), x_shape).astype(dy.dtype)


def pool_forward(x, kind="max", window=2, stride=2):
    if kind == "max":
        return maxpool_forward(np.asarray(x), window, stride)[0]
    if kind == "global_avg":
        return global_avg_pool_forward(np.asarray(x))
    raise ValueError(f"unknown pool kind {kind!r}")


def activation_forward(x, kind="relu"):
    x = np.asarray(x)
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "relu6":
        return np.minimum(np.maximum(x, 0), 6)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(x, dy, kind="relu"):
    if kind == "relu":
        return dy * (x > 0)
    return dy * ((x > 0) & (x < 6))


def dropout_forward(x, rate, rng=None, training=False):
    """Inverted dropout; returns (output, mask or None)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x)
    if not training or rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def softmax(logits):
    z = np.asarray(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(probs, onehot):
    """Batch mean of ``-sum(y * log p)`` with ``p`` clipped to [1e-7, 1]."""
    p = np.clip(np.asarray(probs), 1e-7, 1.0)
    y = np.asarray(onehot)
    return float(np.mean(-np.sum(y * np.log(p), axis=-1)))
