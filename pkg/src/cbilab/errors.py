"""Exception types shared across the package."""


class CBILabError(Exception):
    pass


class DomainError(CBILabError, ValueError):
    """An operation was called outside the parameter range where it is defined."""


class ConfigError(CBILabError, ValueError):
    """Malformed or incomplete experiment / mechanism configuration."""


class NumericalError(CBILabError, ArithmeticError):
    """A numerical routine failed to reach its tolerance.

    ``residual`` carries the last error estimate and ``diagnostics`` any
    extra context (step sizes, iteration counts) useful for debugging.
    """

    def __init__(self, message, residual=None, diagnostics=None):
        super().__init__(message)
        self.residual = residual
        self.diagnostics = dict(diagnostics or {})


class PopulationOverflowError(CBILabError, OverflowError):
    """A simulated population exceeded the overflow guard."""
