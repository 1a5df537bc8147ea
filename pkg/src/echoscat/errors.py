"""Exception hierarchy shared by all echoscat modules."""


class EchoscatError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(EchoscatError):
    """An operation was called with arguments violating its preconditions."""


class FormatError(EchoscatError):
    """A file does not conform to one of the on-disk formats."""


class NumericalError(EchoscatError):
    """A solver produced non-finite values or broke down."""


class MetricError(EchoscatError):
    """A metric is undefined for the given inputs (e.g. zero variance)."""
