"""Minimal autodiff tensor engine, Adam, and seeded RNG."""

from medgrad.numerics.optim import Adam, AdamState, adam_step
from medgrad.numerics.rng import Rng
from medgrad.numerics.tensor import (
    Tape,
    Tensor,
    backward,
    concat,
    cosine_similarity,
    cross_entropy,
    exp,
    gelu,
    getitem,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    no_grad,
    relu,
    reshape,
    softmax,
    sqrt,
    swapaxes,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "Adam",
    "AdamState",
    "Rng",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "concat",
    "cosine_similarity",
    "cross_entropy",
    "exp",
    "gelu",
    "getitem",
    "l2_normalize",
    "layer_norm",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "no_grad",
    "relu",
    "reshape",
    "softmax",
    "sqrt",
    "swapaxes",
    "tanh",
    "transpose",
    "tsum",
]
