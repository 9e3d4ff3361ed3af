"""Exception types raised across the package."""


class PilotClusterError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(PilotClusterError, ValueError):
    pass


class InvalidDeviationError(PilotClusterError, ValueError):
    pass


class ZFInfeasibleError(PilotClusterError):
    """Zero-forcing needs more antennas than scheduled users (M > K_j)."""


class NumericalDomainError(PilotClusterError, ArithmeticError):
    """An interference term came out non-positive, so log2(1 + 1/I) is undefined."""


class LimitExceededError(PilotClusterError):
    pass


class RankDeficientError(PilotClusterError, ArithmeticError):
    pass


class MissingDataError(PilotClusterError, ValueError):
    """A CSV or plot spec lacks a required column or has no rows."""


class ConfigError(PilotClusterError, ValueError):
    pass
