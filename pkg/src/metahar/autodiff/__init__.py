"""Minimal reverse-mode autodiff: tensors, layers, losses, optimizers."""

from .gradcheck import KinkError, grad_check, relative_error
from .layers import (
    CCE_EPS,
    cce_loss,
    conv2d_forward,
    crop_to_multiple,
    dense_forward,
    maxpool2d,
    mse_loss,
    relu,
    sigmoid,
    softmax,
)
from .optim import AdamState, adam_step, sgd_step, value_and_grad
from .params import ParamSet, glorot_uniform, init_conv, init_dense
from .tensor import Tensor, as_tensor, backward, concat, exp, log, no_grad, sqrt, tmax, transpose

__all__ = [
    "AdamState",
    "CCE_EPS",
    "KinkError",
    "ParamSet",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "cce_loss",
    "concat",
    "conv2d_forward",
    "crop_to_multiple",
    "dense_forward",
    "exp",
    "glorot_uniform",
    "grad_check",
    "init_conv",
    "init_dense",
    "log",
    "maxpool2d",
    "mse_loss",
    "no_grad",
    "relative_error",
    "relu",
    "sgd_step",
    "sigmoid",
    "softmax",
    "sqrt",
    "tmax",
    "transpose",
    "value_and_grad",
]
