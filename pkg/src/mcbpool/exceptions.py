"""Exception types raised by mcbpool.

Invalid arguments (wrong shapes, out-of-range values) raise plain
``ValueError``; the classes below cover the remaining failure kinds.
"""


class NumericalError(ArithmeticError):
    """An internal numerical check failed (e.g. a large imaginary residue)."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch}: loss={loss!r}")


class ConfigurationError(ValueError):
    """A configuration cannot be realised (e.g. an infeasible budget match)."""


class CorruptFileError(ValueError):
    """A serialized file failed validation (checksum, version, truncation)."""
