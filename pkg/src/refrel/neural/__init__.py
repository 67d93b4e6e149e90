"""Minimal differentiable building blocks: dense/conv layers, losses, Adam."""

from .checkpoint import checkpoint_exists, load_params, save_params
from .gradcheck import LayerNetwork, finite_diff_check, relative_error
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
    sigmoid,
    sigmoid_grad,
)
from .losses import sigmoid_ce_loss, smooth_l1_loss
from .nets import MLP, ConvNet, convnet_from_params, mlp_from_params
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "ConvNet",
    "LayerNetwork",
    "ConvParams",
    "DenseParams",
    "MLP",
    "adam_step",
    "checkpoint_exists",
    "conv2d_apply",
    "conv2d_grad",
    "convnet_from_params",
    "dense_apply",
    "dense_grad",
    "finite_diff_check",
    "init_conv",
    "init_dense",
    "load_params",
    "mlp_from_params",
    "relative_error",
    "relu",
    "relu_grad",
    "save_params",
    "sigmoid",
    "sigmoid_ce_loss",
    "sigmoid_grad",
    "smooth_l1_loss",
]
