"""Float64 tensors, reverse-mode differentiation and gradient checking."""

from . import _kernels as kernels
from .gradcheck import GradCheckReport, grad_check
from .tensor import (
    MASK_FILL,
    ContractError,
    DimensionError,
    NumericError,
    Tensor,
    add,
    attention,
    backward,
    dot_last,
    embedding,
    gather_rows,
    gelu,
    index,
    layer_norm,
    linear,
    log,
    make_node,
    matmul,
    mean_all,
    mul,
    reshape,
    scale,
    softmax_rows,
    stack,
    sub,
    sum_all,
    sum_last,
    tensor,
    transpose,
    zero_grad,
)

__all__ = [
    "MASK_FILL", "ContractError", "DimensionError", "GradCheckReport", "NumericError",
    "Tensor", "add", "attention", "backward", "dot_last", "embedding", "gather_rows", "gelu", "grad_check",
    "index", "kernels", "layer_norm", "linear", "log", "make_node", "matmul",
    "mean_all", "mul", "reshape", "scale", "softmax_rows", "stack", "sub", "sum_all",
    "sum_last", "tensor", "transpose", "zero_grad",
]
