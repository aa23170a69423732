"""Exception types raised across the package."""


class SaaCltError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SaaCltError, ValueError):
    """Invalid run parameters (grid bounds, sample sizes, stage indices, ...)."""


class ModelError(SaaCltError, ValueError):
    """Problem data that cannot be evaluated (non-finite costs, unsupported noise)."""


class DomainError(SaaCltError, ValueError):
    """Argument outside the domain of a function."""


class NumericalError(SaaCltError, ArithmeticError):
    """A factorization or iteration broke down."""
