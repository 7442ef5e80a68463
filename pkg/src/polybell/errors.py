"""Exception types raised across the package."""


class PolybellError(Exception):
    """Base class for all package errors."""


class InvalidArgument(PolybellError, ValueError):
    pass


class InvalidModel(PolybellError, ValueError):
    pass


class SolverError(PolybellError, RuntimeError):
    pass


class SearchFailed(PolybellError, RuntimeError):
    pass


class NoViolationPossible(PolybellError, ValueError):
    """The target correlations do not beat the bound, so no visibility exists."""


class InsufficientData(PolybellError, ValueError):
    pass
