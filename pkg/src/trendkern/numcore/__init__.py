"""Minimal float64 tensor engine: reverse-mode autodiff, Adam, lr schedule."""
from . import kernels
from .optim import AdamState, LrSchedule, adam_step, lr_at_epoch
from .tensor import (
    Tape,
    Tensor,
    abs,
    add,
    backward,
    concat,
    embedding,
    euclidean_distance,
    l2_normalize,
    lstm_cell,
    lstm_step,
    matmul,
    mean,
    mul,
    relu,
    sigmoid,
    slice,
    square,
    sub,
    sum,
    tanh,
)

__all__ = [
    "AdamState", "LrSchedule", "Tape", "Tensor", "abs", "adam_step", "add",
    "backward", "concat", "embedding", "euclidean_distance", "kernels",
    "l2_normalize", "lr_at_epoch", "lstm_cell", "lstm_step", "matmul", "mean", "mul", "relu",
    "sigmoid", "slice", "square", "sub", "sum", "tanh",
]
