"""Minimal reverse-mode differentiable tensor kernel."""

from .functional import (
    EVAL,
    TRAIN,
    BatchNormState,
    batchnorm1d,
    conv1d,
    dense,
    dropout,
    flatten,
    leaky_relu,
    lstm_cell,
    maxpool1d,
)
from .gradcheck import grad_check, relative_error
from .init import kaiming_normal
from .optim import Adam, OptimizerConfig, OptimizerError, adam_step, clip_by_global_norm, global_grad_norm
from .tensor import Parameter, ShapeError, Tensor, as_tensor, concat, stack

__all__ = [
    "EVAL",
    "TRAIN",
    "Adam",
    "BatchNormState",
    "OptimizerConfig",
    "OptimizerError",
    "Parameter",
    "ShapeError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "batchnorm1d",
    "clip_by_global_norm",
    "concat",
    "conv1d",
    "dense",
    "dropout",
    "flatten",
    "global_grad_norm",
    "grad_check",
    "kaiming_normal",
    "leaky_relu",
    "lstm_cell",
    "maxpool1d",
    "relative_error",
    "stack",
]
