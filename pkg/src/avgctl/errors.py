"""Exception types shared across the package."""


class AvgCtlError(Exception):
    """Base class for all package errors."""


class ContractViolation(AvgCtlError, ValueError):
    """An argument broke a documented precondition."""


class DomainError(AvgCtlError, ValueError):
    """A state or level lies outside the model's valid domain."""


class IntegrationError(AvgCtlError, RuntimeError):
    """Integration left the domain or produced non-finite values."""

    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time


class OrbitError(AvgCtlError, RuntimeError):
    """No periodic orbit could be found."""


class DegenerateOrbitError(OrbitError):
    """The seed point is an equilibrium."""


class SolverError(AvgCtlError, RuntimeError):
    """The LP core failed numerically (iteration cap, singular basis)."""


class ExchangeError(AvgCtlError, RuntimeError):
    """The constraint-exchange loop did not converge.

    ``best`` carries the last certificate found, flagged as unconverged.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConfigError(AvgCtlError, ValueError):
    """Invalid or unparsable run configuration."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line
