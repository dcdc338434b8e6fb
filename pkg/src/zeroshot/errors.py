"""Exception hierarchy shared by every module."""


class ZeroShotError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ZeroShotError, ValueError):
    """Operand shapes do not agree."""


class ConfigurationError(ZeroShotError, ValueError):
    """A setting or hyperparameter is outside its valid range."""


class ContractError(ZeroShotError, ValueError):
    """A function precondition was violated by the caller."""


class TrainingError(ZeroShotError, RuntimeError):
    """Optimization produced a non-finite value."""


class UndefinedMetricError(ZeroShotError, ValueError):
    """A metric is undefined for the given labels (e.g. no positives)."""


class FormatError(ZeroShotError, ValueError):
    """A binary or text file does not match its expected layout."""


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


class LabelError(FormatError):
    """A record references a class id outside the declared range."""
