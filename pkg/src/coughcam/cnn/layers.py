"""Functional forward kernels on NCHW float arrays.

Convolutions go through an im2col matrix product with float64
accumulation; outputs are returned as float32.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError

GN_GROUPS = 8
GN_EPS = 1e-5


def out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (B, C, Ho, Wo, kh, kw) strided view
    v = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """2-D cross-correlation. ``weight`` is ``out x in x kh x kw``."""
    x = np.asarray(x)
    weight = np.asarray(weight)
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects a 4-D input, got shape {x.shape}")
    b, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if stride < 1 or padding < 0:
        raise ShapeError("conv2d: stride must be >= 1 and padding >= 0")
    ho, wo = out_size(h, kh, stride, padding), out_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}")
    xd = x.astype(np.float64, copy=False)
    wm = weight.reshape(o, -1).astype(np.float64)
    if kh == 1 and kw == 1 and padding == 0:
        cols = xd[:, :, ::stride, ::stride].transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        if padding:
            xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        win = _windows(xd, kh, kw, stride)[:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    out = cols @ wm.T
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)
    return out.reshape(b, ho, wo, o).transpose(0, 3, 1, 2).astype(np.float32)


def group_norm(x, groups: int = GN_GROUPS, gamma=None, beta=None, eps: float = GN_EPS) -> np.ndarray:
    """Normalize each (sample, channel group) to zero mean, unit variance, then scale/shift."""
    x = np.asarray(x)
    b, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ConfigError(f"group_norm: {c} channels not divisible into {groups} groups")
    g = x.reshape(b, groups, -1).astype(np.float64)
    mu = g.mean(axis=2, keepdims=True)
    var = g.var(axis=2, keepdims=True)
    y = ((g - mu) / np.sqrt(var + eps)).reshape(b, c, h, w)
    if gamma is not None:
        y = y * np.asarray(gamma, dtype=np.float64).reshape(1, c, 1, 1)
    if beta is not None:
        y = y + np.asarray(beta, dtype=np.float64).reshape(1, c, 1, 1)
    return y.astype(np.float32)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(np.float32, copy=False)


def pool2d(x, mode: str, kernel: int, stride: int, padding: int = 0) -> np.ndarray:
    """Max pooling ignores padding; average pooling counts it as zeros."""
    x = np.asarray(x)
    if kernel < 1 or stride < 1:
        raise ShapeError("pool2d: kernel and stride must be >= 1")
    b, c, h, w = x.shape
    ho, wo = out_size(h, kernel, stride, padding), out_size(w, kernel, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"pool2d: kernel {kernel} does not fit input {h}x{w}")
    if mode == "max":
        fill = -np.inf
    elif mode == "avg":
        fill = 0.0
    else:
        raise ValueError(f"unknown pooling mode {mode!r}")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=fill)
    # reduce over kernel offsets with strided slices; faster than a window view
    acc = None
    for dy in range(kernel):
        for dx in range(kernel):
            sl = x[:, :, dy : dy + stride * (ho - 1) + 1 : stride, dx : dx + stride * (wo - 1) + 1 : stride]
            if acc is None:
                acc = sl.astype(np.float64)
            elif mode == "max":
                np.maximum(acc, sl, out=acc)
            else:
                acc += sl
    if mode == "avg":
        acc /= kernel * kernel
    return acc.astype(np.float32)


def linear(x, weight, bias=None) -> np.ndarray:
    """``weight @ x + bias`` for a vector or a batch of row vectors."""
    x = np.asarray(x)
    weight = np.asarray(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} does not match weight {weight.shape}")
    out = x.astype(np.float64) @ weight.astype(np.float64).T
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)
    return out.astype(np.float32)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probabilities, labels, clamp: float = 1e-12) -> float:
    """Mean negative log-likelihood of the true class."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p.ndim == 1:
        p = p[None, :]
    picked = p[np.arange(p.shape[0]), y]
    return float(np.mean(-np.log(np.maximum(picked, clamp))))
