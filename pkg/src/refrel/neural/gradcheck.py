from __future__ import annotations

import numpy as np

from .layers import (
    ConvParams,
    DenseParams,
    conv2d_apply,
    conv2d_grad,
    dense_apply,
    dense_grad,
    relu,
    relu_grad,
    sigmoid,
    sigmoid_grad,
)


def relative_error(analytic, numeric, floor=1e-6):
    """``|a - n| / max(|a|, |n|, floor)``.

    Central differences at ``h = 1e-5`` carry about ``1e-11`` of roundoff, so
    below ``floor`` the comparison becomes absolute rather than amplifying noise.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_diff_check(network, x, h=1e-5, rng=0, check_input=True):
    """Max relative error between backprop and central differences.

    The scalar objective is ``sum(R * network(x))`` for a fixed random ``R``,
    so every output coordinate contributes. Every parameter entry (and every
    input entry when ``check_input``) is perturbed by ``+-h``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    rng = np.random.default_rng(rng)
    x = np.array(x, dtype=np.float64)
    y, cache = network.forward(x)
    proj = rng.standard_normal(y.shape)
    grads, dx = network.backward(cache, proj)

    def objective(inp):
        return float(np.sum(network.forward(inp)[0] * proj))

    worst = 0.0
    for name, p in network.parameters().items():
        g = grads[name]
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            f_plus = objective(x)
            flat[i] = old - h
            f_minus = objective(x)
            flat[i] = old
            num = (f_plus - f_minus) / (2 * h)
            worst = max(worst, float(relative_error(g.reshape(-1)[i], num)))
    if check_input:
        flat_x = x.reshape(-1)
        dx = np.asarray(dx).reshape(-1)
        for i in range(flat_x.size):
            old = flat_x[i]
            flat_x[i] = old + h
            f_plus = objective(x)
            flat_x[i] = old - h
            f_minus = objective(x)
            flat_x[i] = old
            worst = max(worst, float(relative_error(dx[i], (f_plus - f_minus) / (2 * h))))
    return worst


class LayerNetwork:
    """Wrap one layer (or an activation) in the network protocol for :func:`finite_diff_check`.

    ``layer`` is a :class:`DenseParams`, a :class:`ConvParams`, or one of the
    strings ``"relu"`` / ``"sigmoid"``.
    """

    def __init__(self, layer):
        self.layer = layer

    def parameters(self):
        if isinstance(self.layer, DenseParams):
            return {"weights": self.layer.weights, "bias": self.layer.bias}
        if isinstance(self.layer, ConvParams):
            return {"kernels": self.layer.kernels, "bias": self.layer.bias}
        return {}

    def forward(self, x):
        if isinstance(self.layer, DenseParams):
            return dense_apply(self.layer, x), x
        if isinstance(self.layer, ConvParams):
            return conv2d_apply(self.layer, x), x
        fn = {"relu": relu, "sigmoid": sigmoid}[self.layer]
        return np.asarray(fn(x)), x

    def backward(self, x, dy):
        if isinstance(self.layer, DenseParams):
            dw, db, dx = dense_grad(self.layer, x, dy)
            return {"weights": dw, "bias": db}, dx
        if isinstance(self.layer, ConvParams):
            dk, db, dx = conv2d_grad(self.layer, x, dy)
            return {"kernels": dk, "bias": db}, dx
        grad = {"relu": relu_grad, "sigmoid": sigmoid_grad}[self.layer]
        return {}, grad(x, dy)
