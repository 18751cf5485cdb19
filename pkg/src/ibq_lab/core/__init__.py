"""
core
Tensor engine shared by every stage of the lab: values, tape, operations,
layers, random streams, optimizers and the gradient checker.
"""

from .errors import (ArchiveError, ConfigError, ContractError, DataError, DimensionError,
                     IbqLabError, NumericError, PpmError, TrainingDivergedError)
from .gradcheck import GradCheckReport, grad_check
from .optim import Adam, OptimState, adam_step, clip_grad_norm, global_norm
from .rng import Rng, Stream, rng_normal, rng_uniform
from .tensor import (DType, Tape, Tensor, argmax_onehot, backward, current_tape, detach, matmul,
                     no_grad, softmax, straight_through)

__all__ = [
    "Adam", "ArchiveError", "ConfigError", "ContractError", "DataError", "DimensionError", "DType",
    "GradCheckReport", "IbqLabError", "NumericError", "OptimState", "PpmError", "Rng", "Tape",
    "Tensor", "TrainingDivergedError", "adam_step", "argmax_onehot", "backward", "clip_grad_norm",
    "current_tape", "detach", "global_norm", "grad_check", "matmul", "no_grad", "rng_normal",
    "rng_uniform", "softmax", "straight_through", "Stream",
]
