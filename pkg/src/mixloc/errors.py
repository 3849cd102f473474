"""Exception hierarchy shared across the package.

DataError subclasses map to CLI exit code 2, NumericalError to exit code 3.
"""


class MixlocError(Exception):
    pass


class DataError(MixlocError):
    pass


class DegenerateCloud(DataError):
    """Cloud too small for the requested geometric operation."""


class EmptyScan(DataError):
    """A simulated or loaded scan contained no points."""


class EncoderMismatch(DataError):
    """Buffer or checkpoint was produced by a different encoder config."""


class NoPositives(DataError):
    """No buffer entry has a positive within the mining radius."""


class DegenerateBatch(DataError):
    """Batch too small for the requested loss."""


class ShapeMismatch(DataError):
    """Tensor shape does not match the model or operation contract."""


class NumericalError(MixlocError):
    pass


class NonFiniteLoss(NumericalError):
    """Training produced a NaN/Inf loss; carries the offending step index."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value
