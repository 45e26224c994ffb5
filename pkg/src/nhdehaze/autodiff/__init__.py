"""Minimal float64 tensor library with reverse-mode differentiation."""

from . import functional, ops
from .functional import (
    avg_pool2,
    bilinear_sample,
    conv2d,
    fft2,
    gelu,
    ifft2,
    layernorm,
    softmax,
    upsample_nearest,
)
from .gradcheck import GradCheckReport, grad_check, module_grad_check, relative_error
from .ops import (
    abs,
    clamp,
    concat,
    exp,
    leaky_relu,
    log,
    matmul,
    mean,
    pad2d,
    relu,
    reshape,
    sigmoid,
    softplus,
    sqrt,
    transpose,
)
from .tensor import (
    DTYPE,
    Function,
    GraphError,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    is_grad_enabled,
    no_grad,
)

__all__ = [
    "DTYPE",
    "Function",
    "GradCheckReport",
    "GraphError",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "abs",
    "as_tensor",
    "avg_pool2",
    "backward",
    "bilinear_sample",
    "clamp",
    "concat",
    "conv2d",
    "exp",
    "fft2",
    "functional",
    "gelu",
    "grad_check",
    "module_grad_check",
    "ifft2",
    "is_grad_enabled",
    "layernorm",
    "leaky_relu",
    "log",
    "matmul",
    "mean",
    "no_grad",
    "ops",
    "pad2d",
    "relative_error",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "softplus",
    "sqrt",
    "transpose",
    "upsample_nearest",
]
