"""Minimal dense-tensor numerical core with reverse-mode gradients."""

from .functional import conv2d, dropout, dropout_mask, lstm_cell, lstm_step, softmax
from .gradcheck import GradCheckReport, grad_check
from .optim import Adam, adam_step
from .tensor import (
    Parameter,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat,
    dense,
    getitem,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    square,
    stack,
    sub,
    tanh,
    tensor_sum,
)
