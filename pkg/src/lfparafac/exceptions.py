"""Exception hierarchy shared by the package."""


class LFParafacError(Exception):
    """Base class for all package errors."""


class DataFormatError(LFParafacError, ValueError):
    """Malformed input file or dataset."""


class ConfigError(LFParafacError, ValueError):
    """Invalid configuration value."""


class SmoothingError(LFParafacError):
    """A local polynomial fit has a degenerate design even after widening."""


class InsufficientDataError(LFParafacError):
    """Too few observations to estimate a quantity."""


class NumericalError(LFParafacError, ArithmeticError):
    """Non-finite values or failed factorizations."""


class RankDeficiencyError(NumericalError):
    """A Gram matrix stays singular after ridge jitter."""


class DegenerateComponentError(NumericalError):
    """A component collapsed to zero and cannot be normalized."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component
