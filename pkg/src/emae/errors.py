"""Exception types shared across the package."""

from __future__ import annotations


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class NumericError(ArithmeticError):
    """A forward operation produced NaN or Inf from finite inputs."""


class ModeError(RuntimeError):
    """Operation invoked on a model bundle in the wrong mode."""


class DegenerateLossError(ArithmeticError):
    """Loss is mathematically undefined for these inputs.

    Raised for an empty mask or an all-zero masked target, both of which make
    the cosine undefined and indicate a broken mask or dataset rather than a
    recoverable numerical condition.
    """


class FormatError(ValueError):
    """A binary container violated its format; carries the byte offset."""

    def __init__(self, offset: int, message: str):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointFormatError(FormatError):
    """Model checkpoint file is malformed."""


class DatasetFormatError(FormatError):
    """Signal dataset container file is malformed."""


class WeightImportError(ValueError):
    """External weight import hit a shape conflict on a mapped name."""
