"""Dense and convolution layers with hand-derived gradients (float64)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatchError


@dataclass
class DenseParams:
    weights: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)

    @property
    def in_dim(self):
        return self.weights.shape[0]

    @property
    def out_dim(self):
        return self.weights.shape[1]


@dataclass
class ConvParams:
    kernels: np.ndarray  # (k, k, in_ch, out_ch)
    bias: np.ndarray  # (out_ch,)

    def __post_init__(self):
        k = self.kernels.shape[0]
        if self.kernels.ndim != 4 or self.kernels.shape[1] != k or k % 2 == 0:
            raise ShapeMismatchError(f"kernels must be (k, k, in, out) with odd k, got {self.kernels.shape}")

    @property
    def k(self):
        return self.kernels.shape[0]

    @property
    def in_ch(self):
        return self.kernels.shape[2]

    @property
    def out_ch(self):
        return self.kernels.shape[3]


def glorot_uniform(rng, shape, fan_in, fan_out):
    """Uniform(-a, a) with ``a = sqrt(6 / (fan_in + fan_out))``; ``rng`` is a seed or Generator."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return np.random.default_rng(rng).uniform(-a, a, size=shape)


def init_dense(in_dim, out_dim, rng):
    return DenseParams(glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim), np.zeros(out_dim))


def init_conv(k, in_ch, out_ch, rng):
    w = glorot_uniform(rng, (k, k, in_ch, out_ch), k * k * in_ch, k * k * out_ch)
    return ConvParams(w, np.zeros(out_ch))


def dense_apply(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.in_dim:
        raise ShapeMismatchError(f"dense input has last dim {x.shape[-1]}, expected {params.in_dim}")
    return x @ params.weights + params.bias


def dense_grad(params, x, dy):
    """Return ``(d_weights, d_bias, d_x)`` for ``y = x W + b`` given ``dL/dy``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.in_dim or dy.shape[-1] != params.out_dim:
        raise ShapeMismatchError("dense gradient shapes do not match parameters")
    x2 = x.reshape(-1, params.in_dim)
    dy2 = dy.reshape(-1, params.out_dim)
    return x2.T @ dy2, dy2.sum(axis=0), dy @ params.weights.T


def _as_batch(x, in_ch):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[-1] != in_ch:
        raise ShapeMismatchError(f"conv input must be (..., H, W, {in_ch}), got {x.shape}")
    return x, single


def _im2col(x, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    # (B, H, W, C, k, k) -> (B, H, W, k, k, C)
    win = sliding_window_view(xp, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
    b, h, w = x.shape[:3]
    return win.reshape(b * h * w, k * k * x.shape[3])


def conv2d_apply(params, x):
    """Same-padded, stride-1 cross-correlation over ``(H, W, C)`` or ``(B, H, W, C)``."""
    xb, single = _as_batch(x, params.in_ch)
    b, h, w, _ = xb.shape
    cols = _im2col(xb, params.k)
    y = cols @ params.kernels.reshape(-1, params.out_ch) + params.bias
    y = y.reshape(b, h, w, params.out_ch)
    return y[0] if single else y


def conv2d_grad(params, x, dy):
    """Return ``(d_kernels, d_bias, d_x)`` for :func:`conv2d_apply`."""
    xb, single = _as_batch(x, params.in_ch)
    dyb = dy[None] if single else dy
    b, h, w, c = xb.shape
    k, p = params.k, params.k // 2
    if dyb.shape != (b, h, w, params.out_ch):
        raise ShapeMismatchError(f"conv output gradient has shape {dy.shape}")
    cols = _im2col(xb, k)
    dy2 = dyb.reshape(-1, params.out_ch)
    d_kernels = (cols.T @ dy2).reshape(params.kernels.shape)
    d_bias = dy2.sum(axis=0)
    dcols = (dy2 @ params.kernels.reshape(-1, params.out_ch).T).reshape(b, h, w, k, k, c)
    dxp = np.zeros((b, h + 2 * p, w + 2 * p, c))
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
    dx = dxp[:, p:p + h, p:p + w, :]
    return d_kernels, d_bias, (dx[0] if single else dx)


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x, dy):
    return dy * (x > 0)


def sigmoid(x):
    """Logistic function without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def sigmoid_grad(x, dy):
    s = sigmoid(x)
    return dy * s * (1.0 - s)
