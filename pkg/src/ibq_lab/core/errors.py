"""
core/errors.py
This module defines the exception hierarchy shared by every part of the lab.
Each error carries the process exit code the command-line front end uses.
"""


class IbqLabError(Exception):
    """Base class for all errors raised by the lab."""

    exit_code = 1


class ConfigError(IbqLabError, ValueError):
    """Invalid, unknown or inconsistent configuration."""


class DataError(IbqLabError, ValueError):
    """Input data is missing, unreadable or malformed."""


class ArchiveError(DataError):
    """A tensor archive or token dataset file failed to parse or validate."""


class PpmError(DataError):
    """A PPM image could not be decoded."""


class ContractError(IbqLabError, ValueError):
    """A caller violated an operation's pre-condition."""


class DimensionError(ContractError):
    """Tensor shapes do not agree."""


class NumericError(IbqLabError, ArithmeticError):
    """A computation produced NaN/Inf or left its mathematical domain."""

    exit_code = 2


class TrainingDivergedError(NumericError):
    """A training loss became non-finite.

    Attributes:
        checkpoint (str or None): Path of the last checkpoint written before the failure.
    """

    def __init__(self, message: str, checkpoint=None):
        if checkpoint is not None:
            message = f"{message} (last good checkpoint: {checkpoint})"
        else:
            message = f"{message} (no checkpoint written yet)"
        super().__init__(message)
        self.checkpoint = checkpoint
