"""Minimal dense-tensor engine with reverse-mode differentiation."""

from . import functional
from .functional import (
    ShapeError,
    batchnorm2d,
    binary_cross_entropy,
    conv1d,
    conv2d,
    dropout,
    embedding,
    lstm_sequence,
    maxpool2d,
    softmax,
    softmax_cross_entropy,
)
from .gradcheck import gradient_check, relative_error
from .layers import LSTM, BatchNorm2d, Conv1d, Conv2d, Embedding, Linear, Module, Parameter
from .optim import Adam, AdamState, NonFiniteGradientError, adam_step
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    default_dtype,
    get_default_dtype,
    matmul,
    no_grad,
    relu,
    sigmoid,
    stack,
    tanh,
)

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm2d",
    "Conv1d",
    "Conv2d",
    "Embedding",
    "LSTM",
    "Linear",
    "Module",
    "NonFiniteGradientError",
    "Parameter",
    "ShapeError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "batchnorm2d",
    "binary_cross_entropy",
    "concat",
    "conv1d",
    "conv2d",
    "default_dtype",
    "dropout",
    "embedding",
    "functional",
    "get_default_dtype",
    "gradient_check",
    "lstm_sequence",
    "matmul",
    "maxpool2d",
    "no_grad",
    "relative_error",
    "relu",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
    "stack",
    "tanh",
]
