"""Exception hierarchy shared across the package."""


class DFDError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(DFDError, ValueError):
    pass


class FormatError(DFDError):
    """Malformed file contents. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class PreconditionError(DFDError, ValueError):
    pass


class RangeError(DFDError, ValueError):
    pass


class TrainingError(DFDError, RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class CalibrationError(DFDError, RuntimeError):
    pass


class ConfigurationError(DFDError, ValueError):
    pass
