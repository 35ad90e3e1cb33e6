"""Minimal reverse-mode differentiation engine and optimizers."""

from .autodiff import (
    Parameter,
    Tensor,
    add,
    affine,
    asinh,
    backward,
    bias_add,
    channel_embedding,
    channel_mix,
    concat,
    constant,
    conv1d,
    crop,
    dropout,
    embedding,
    glorot_uniform,
    gradient_check,
    identity,
    matmul,
    mean_all,
    mse,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    sum_all,
    tanh,
    transpose,
)
from .optim import SGD, Adam

__all__ = [
    "Parameter",
    "Tensor",
    "add",
    "affine",
    "asinh",
    "backward",
    "bias_add",
    "channel_embedding",
    "channel_mix",
    "concat",
    "constant",
    "conv1d",
    "crop",
    "dropout",
    "embedding",
    "glorot_uniform",
    "gradient_check",
    "identity",
    "matmul",
    "mean_all",
    "mse",
    "mul",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
    "sum_all",
    "tanh",
    "transpose",
    "SGD",
    "Adam",
]
