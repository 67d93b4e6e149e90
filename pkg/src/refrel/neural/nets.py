"""Small networks assembled from the layers in :mod:`refrel.neural.layers`.

A network exposes ``parameters()`` (live name -> array views), ``forward(x)``
returning ``(output, cache)`` and ``backward(cache, d_output)`` returning
``(grads, d_input)``. That is all the optimizer, gradient checker and
checkpoint code rely on.
"""

from __future__ import annotations

import numpy as np

from .layers import (
    ConvParams,
    DenseParams,
    conv2d_apply,
    conv2d_grad,
    dense_apply,
    dense_grad,
    init_conv,
    init_dense,
    relu,
    relu_grad,
)


class MLP:
    """Stack of dense layers with ReLU between them and a linear output."""

    def __init__(self, dims, rng=None, layers=None):
        if layers is None:
            rng = np.random.default_rng(rng)
            layers = [init_dense(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.layers = list(layers)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def parameters(self):
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"dense{i}.weights"] = layer.weights
            out[f"dense{i}.bias"] = layer.bias
        return out

    def forward(self, x):
        acts = [np.asarray(x, dtype=np.float64)]
        pre = []
        h = acts[0]
        for i, layer in enumerate(self.layers):
            z = dense_apply(layer, h)
            pre.append(z)
            h = relu(z) if i < len(self.layers) - 1 else z
            acts.append(h)
        return h, (acts, pre)

    def backward(self, cache, dy):
        acts, pre = cache
        grads = {}
        d = dy
        for i in range(len(self.layers) - 1, -1, -1):
            if i < len(self.layers) - 1:
                d = relu_grad(pre[i], d)
            dw, db, d = dense_grad(self.layers[i], acts[i], d)
            grads[f"dense{i}.weights"] = dw
            grads[f"dense{i}.bias"] = db
        return grads, d


class ConvNet:
    """3x3 conv stack with ReLU, a 1x1 projection and a spatial-mean readout.

    Input ``(B, H, W, in_ch)``; output ``(B, out_dim)`` logits.
    """

    def __init__(self, in_ch, hidden_ch, out_dim, n_conv3=3, rng=None, layers=None):
        if layers is None:
            rng = np.random.default_rng(rng)
            chans = [in_ch] + [hidden_ch] * n_conv3
            layers = [init_conv(3, a, b, rng) for a, b in zip(chans[:-1], chans[1:])]
            layers.append(init_conv(1, chans[-1], out_dim, rng))
        self.layers = list(layers)

    @property
    def in_ch(self):
        return self.layers[0].in_ch

    @property
    def out_dim(self):
        return self.layers[-1].out_ch

    def parameters(self):
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"conv{i + 1}.kernels"] = layer.kernels
            out[f"conv{i + 1}.bias"] = layer.bias
        return out

    def forward(self, x):
        h = np.asarray(x, dtype=np.float64)
        if h.ndim == 3:
            h = h[None]
        acts = [h]
        pre = []
        for i, layer in enumerate(self.layers):
            z = conv2d_apply(layer, h)
            pre.append(z)
            h = relu(z) if i < len(self.layers) - 1 else z
            acts.append(h)
        logits = h.mean(axis=(1, 2))
        return logits, (acts, pre)

    def backward(self, cache, dy):
        acts, pre = cache
        b, hh, ww, _ = acts[-1].shape
        d = np.broadcast_to(dy[:, None, None, :] / (hh * ww), acts[-1].shape)
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            if i < len(self.layers) - 1:
                d = relu_grad(pre[i], d)
            dk, db, d = conv2d_grad(self.layers[i], acts[i], d)
            grads[f"conv{i + 1}.kernels"] = dk
            grads[f"conv{i + 1}.bias"] = db
        return grads, d


def mlp_from_params(params, prefix=""):
    n = sum(1 for k in params if k.startswith(prefix + "dense") and k.endswith(".weights"))
    layers = [DenseParams(params[f"{prefix}dense{i}.weights"], params[f"{prefix}dense{i}.bias"]) for i in range(n)]
    return MLP(None, layers=layers)


def convnet_from_params(params, prefix=""):
    n = sum(1 for k in params if k.startswith(prefix + "conv") and k.endswith(".kernels"))
    layers = [ConvParams(params[f"{prefix}conv{i}.kernels"], params[f"{prefix}conv{i}.bias"]) for i in range(1, n + 1)]
    return ConvNet(None, None, None, layers=layers)
