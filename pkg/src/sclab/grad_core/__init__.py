from .check import gradcheck, numerical_grad, relative_error
from .optim import OptimizerState, optimizer_step, zero_grad
from .serial import SerializationError, tensor_from_bytes, tensor_to_bytes
from .tensor import (
    EPS,
    NonFiniteError,
    NonFiniteGradientError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    clamp_min,
    concat,
    conv1d,
    cosine_similarity,
    div,
    elementwise,
    exp,
    getitem,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    reduce,
    relu,
    reshape,
    square,
    sub,
    sum_,
    transpose,
)

__all__ = [
    "EPS", "NonFiniteError", "NonFiniteGradientError", "OptimizerState", "SerializationError",
    "ShapeError", "Tensor", "add", "as_tensor", "clamp_min", "concat", "conv1d", "cosine_similarity",
    "div", "elementwise", "exp", "getitem", "gradcheck", "log", "log_softmax", "matmul", "mean", "mul", "neg", "numerical_grad",
    "optimizer_step", "reduce", "relative_error", "relu", "reshape", "square", "sub", "sum_", "tensor_from_bytes",
    "tensor_to_bytes", "transpose", "zero_grad",
]
