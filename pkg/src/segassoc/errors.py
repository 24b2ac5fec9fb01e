"""Exception hierarchy shared by every module."""


class SegassocError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SegassocError, ValueError):
    """A configuration value violates one of its bounds."""


class NumericError(SegassocError, ArithmeticError):
    """Non-finite values were found where finite ones are required."""


class EmptySegmentError(SegassocError, ValueError):
    """Mask pooling was asked to pool over an empty mask."""


class DegenerateEmbeddingError(SegassocError, ValueError):
    """A zero vector cannot be L2-normalized."""


class UndefinedDiceError(SegassocError, ValueError):
    """Dice of two all-zero inputs has no value."""


class ConsistencyError(SegassocError, ValueError):
    """Labels, registry and tensors disagree with each other."""


class InsufficientBatchError(SegassocError, ValueError):
    """Fewer than two traceable nodes, so no anchor has a negative."""


class WindowError(SegassocError, ValueError):
    """The temporal window does not fit in the sequence."""


class SizeError(SegassocError, ValueError):
    """Instance is too large for exhaustive enumeration."""


class DivergenceError(SegassocError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, component: str, value: float):
        super().__init__(f"non-finite {component} loss: {value!r}")
        self.component = component
        self.value = value
