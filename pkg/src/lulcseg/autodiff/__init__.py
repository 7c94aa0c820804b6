"""Minimal NCHW array engine with reverse-mode gradients."""

from .functional import (
    ConvSpec,
    conv2d_backward,
    conv2d_forward,
    conv_transpose2d_backward,
    conv_transpose2d_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    softmax,
    softmax_cross_entropy,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, concat, conv2d, conv_transpose2d, max_pool2d, parameter, relu

__all__ = [
    "Adam",
    "AdamState",
    "ConvSpec",
    "Tensor",
    "adam_step",
    "concat",
    "conv2d",
    "conv2d_backward",
    "conv2d_forward",
    "conv_transpose2d",
    "conv_transpose2d_backward",
    "conv_transpose2d_forward",
    "max_pool2d",
    "maxpool2d_backward",
    "maxpool2d_forward",
    "parameter",
    "relu",
    "softmax",
    "softmax_cross_entropy",
]
