"""
IBQ Lab - index backpropagation quantization for visual tokenizers, studied at desk scale.

This package contains the tensor engine, five quantizers, the stage-1
tokenizer, the stage-2 autoregressive transformer and the experiment CLI.
"""

__version__ = "2026.0.1"
__author__ = "IBQ Lab Project"

from .config import RunConfig, load_config
from .core.errors import (ConfigError, ContractError, DataError, DimensionError, IbqLabError, NumericError,
                          TrainingDivergedError)
from .quantizers import QuantizerKind

__all__ = [
    "ConfigError", "ContractError", "DataError", "DimensionError", "IbqLabError", "NumericError",
    "QuantizerKind", "RunConfig", "TrainingDivergedError", "load_config",
]
