"""Minimal dense tensors with reverse-mode autodiff and the layers the matcher needs."""

from .layers import (
    LEAKY_SLOPE,
    BatchNormState,
    batch_norm,
    conv2d,
    flatten,
    leaky_relu,
    linear,
    max_pool2,
    tanh_act,
)
from .optim import ParameterSet, adam_step, he_init, he_variance
from .tensor import DEFAULT_DTYPE, Tensor, add, as_tensor, concat, dot, matmul, mul, reshape, take, tensor_sum

__all__ = [
    "LEAKY_SLOPE",
    "DEFAULT_DTYPE",
    "BatchNormState",
    "ParameterSet",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "batch_norm",
    "concat",
    "conv2d",
    "dot",
    "flatten",
    "he_init",
    "he_variance",
    "leaky_relu",
    "linear",
    "matmul",
    "max_pool2",
    "mul",
    "reshape",
    "take",
    "tanh_act",
    "tensor_sum",
]
