"""
Exception hierarchy shared by every captrfuse layer.
"""
from typing import Optional


class CaptrFuseError(Exception):
    """Base class for all captrfuse errors."""


class ShapeError(CaptrFuseError, ValueError):
    """Tensor shapes do not line up for an operation."""


class ParameterError(CaptrFuseError, ValueError):
    """An operation received an out-of-range hyperparameter."""


class ContractError(CaptrFuseError, ValueError):
    """A precondition of an operation was violated by the caller."""


class TokenIndexError(CaptrFuseError, IndexError):
    """A token or class id is outside the valid range."""


class ConfigError(CaptrFuseError, ValueError):
    """Configuration failed validation."""


class IntegrityError(CaptrFuseError):
    """A persisted tensor or checkpoint is missing or damaged."""

    def __init__(self, message: str, tensor: Optional[str] = None):
        super().__init__(message if tensor is None else f"{tensor}: {message}")
        self.tensor = tensor


class CheckpointMismatchError(IntegrityError):
    """Checkpoint contents disagree with its manifest or the model config."""


class PhaseViolationError(CaptrFuseError):
    """A parameter outside the active training phase changed."""


class TrainingDivergedError(CaptrFuseError):
    """The training loss stopped being finite."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


class DataError(CaptrFuseError, ValueError):
    """A dataset file or image could not be read."""
