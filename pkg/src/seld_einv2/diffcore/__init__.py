"""Minimal reverse-mode differentiable tensor engine."""

from seld_einv2.diffcore.gradcheck import grad_check
from seld_einv2.diffcore.nn import InitSpec, Module, Parameter
from seld_einv2.diffcore.ops import (
    batchnorm2d,
    conv2d,
    linear,
    matmul,
    pool2d,
    relu,
    sigmoid,
    softmax_lastdim,
    tanh,
)
from seld_einv2.diffcore.tensor import (
    Tape,
    Tensor,
    get_default_dtype,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "InitSpec",
    "Module",
    "Parameter",
    "Tape",
    "Tensor",
    "batchnorm2d",
    "conv2d",
    "get_default_dtype",
    "grad_check",
    "linear",
    "matmul",
    "no_grad",
    "pool2d",
    "relu",
    "set_default_dtype",
    "sigmoid",
    "softmax_lastdim",
    "tanh",
]
