"""Minimal tensor core with reverse-mode automatic differentiation."""

from sstdunet.tensor.core import (
    DEFAULT_DTYPE,
    Tensor,
    add,
    as_tensor,
    clip,
    concat,
    div,
    exp,
    getitem,
    is_grad_enabled,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    power,
    reshape,
    roll,
    sqrt,
    sub,
    swapaxes,
    topological_order,
    transpose,
    tsum,
)
from sstdunet.tensor.functional import (
    activation,
    conv3d,
    conv_transpose3d,
    gelu,
    layer_norm,
    leaky_relu,
    linear,
    maxpool3d,
    sigmoid,
    softmax,
)
from sstdunet.tensor.gradcheck import GradCheckReport, finite_diff_check
from sstdunet.tensor.module import Module, Parameter, count_parameters

__all__ = [
    "DEFAULT_DTYPE", "Tensor", "add", "as_tensor", "clip", "concat", "div", "exp", "getitem",
    "is_grad_enabled", "log", "matmul", "mean", "mul", "no_grad", "power", "reshape", "roll",
    "sqrt", "sub", "swapaxes", "topological_order", "transpose", "tsum", "activation", "conv3d",
    "conv_transpose3d", "gelu", "layer_norm", "leaky_relu", "linear", "maxpool3d", "sigmoid",
    "softmax", "GradCheckReport", "finite_diff_check", "Module", "Parameter", "count_parameters",
]
