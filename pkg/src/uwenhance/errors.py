"""Exception types raised across the package."""


class EnhanceError(Exception):
    """Base class for all package errors."""


class LoadError(EnhanceError, OSError):
    pass


class FormatError(EnhanceError, ValueError):
    pass


class ShapeError(EnhanceError, ValueError):
    pass


class RangeError(EnhanceError, ValueError):
    pass


class AlignmentError(EnhanceError, ValueError):
    pass


class ConfigError(EnhanceError, ValueError):
    pass


class DegenerateInputError(EnhanceError, ValueError):
    pass


class SizeError(EnhanceError, ValueError):
    pass


class GridError(EnhanceError, ValueError):
    pass


class ExtractorError(EnhanceError, RuntimeError):
    pass


class CapabilityError(EnhanceError, TypeError):
    pass


class TrainingError(EnhanceError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class VersionError(EnhanceError, ValueError):
    pass


class MetricError(EnhanceError, RuntimeError):
    """A metric failed on one member of a batch; ``index`` says which."""

    def __init__(self, message, index):
        super().__init__(f"{message} (pair {index})")
        self.index = index
