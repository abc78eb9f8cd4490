"""Exception hierarchy for adverseg."""

from typing import Optional


class AdversegError(Exception):
    """Base class for all adverseg errors."""


class ShapeError(AdversegError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class InvalidShapeError(ShapeError):
    """A shape is empty or contains a non-positive dimension."""


class AxisError(ShapeError):
    """A reduction axis is out of range for the tensor rank."""


class DegenerateBatchError(ShapeError):
    """Batch statistics requested over fewer than two elements."""


class ConfigError(AdversegError, ValueError):
    """Invalid configuration value or unknown key."""


class DataError(AdversegError, ValueError):
    """Invalid dataset content (labels, manifests, empty inputs)."""


class FormatError(DataError):
    """A binary file does not follow its declared layout."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointVersionError(FormatError):
    """Checkpoint was written by an incompatible format version."""

    def __init__(self, found: int, expected: int, offset: int = 0):
        super().__init__(
            f"unsupported checkpoint version {found}, expected {expected}", offset
        )
        self.found = found
        self.expected = expected


class NonFiniteError(AdversegError, ArithmeticError):
    """A loss or gradient evaluated to NaN or infinity."""

    def __init__(self, name: str, step: Optional[int] = None):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite value in '{name}'{where}")
        self.name = name
        self.step = step
