"""Minimal float64 tensor kernel with tape-based reverse-mode differentiation."""

from .functional import (
    DimensionError,
    add,
    concat,
    conv2d,
    conv_transpose2d_k2s2,
    dropout,
    flatten,
    global_avg_pool,
    linear,
    maxpool2d,
    mean_over_instances,
    relu,
    reshape,
    rmse_loss,
    scale,
    sum_all,
    upsample_bilinear,
)
from .optim import Adam, adam_step
from .tensor import Parameter, Tape, Tensor, backward, current_tape

__all__ = [
    "Adam", "DimensionError", "Parameter", "Tape", "Tensor", "adam_step", "add", "backward",
    "concat", "conv2d", "conv_transpose2d_k2s2", "current_tape", "dropout", "flatten",
    "global_avg_pool", "linear", "maxpool2d", "mean_over_instances", "relu", "reshape",
    "rmse_loss", "scale", "sum_all", "upsample_bilinear",
]
