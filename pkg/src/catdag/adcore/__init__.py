"""Minimal dense-tensor core with reverse-mode differentiation."""

from .gradcheck import GradCheckReport, grad_check, rel_error
from .ops import (
    add,
    batchnorm,
    broadcast_to,
    column_loss,
    concat_lastdim,
    dropout,
    linear,
    masked_linear,
    matmul,
    mean_all,
    mul,
    nodewise_linear,
    reshape,
    rowsoftmax,
    scale,
    sigmoid,
    slice_lastdim,
    sub,
    sum_all,
    swish,
    take_lastdim,
    transpose,
)
from .params import AdamW, AdamWState, ParamStore, adamw_step, load_tensors, save_tensors
from .tensor import Parameter, Tensor, as_tensor, grad_enabled, no_grad

__all__ = [
    "AdamW", "AdamWState", "GradCheckReport", "ParamStore", "Parameter", "Tensor",
    "adamw_step", "add", "as_tensor", "batchnorm", "broadcast_to", "column_loss",
    "concat_lastdim", "dropout", "grad_check", "grad_enabled", "linear", "load_tensors",
    "masked_linear", "matmul", "mean_all", "mul", "no_grad", "nodewise_linear",
    "rel_error", "reshape", "rowsoftmax", "save_tensors", "scale", "sigmoid",
    "slice_lastdim", "sub", "sum_all", "swish", "take_lastdim", "transpose",
]
