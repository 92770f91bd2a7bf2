"""Exception types raised by the solvers, the oracle and the CLI."""


class AgecastError(Exception):
    """Base class for every error raised by this package."""


class DegenerateCost(AgecastError, ValueError):
    """The expected age cost is identically zero, so no finite threshold exists."""


class NotConverged(AgecastError, RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class RefuseTooLarge(AgecastError, ValueError):
    """Instance is too large for exhaustive enumeration of request configurations."""


class NonThreshold(AgecastError, RuntimeError):
    """A computed policy is not monotone in the time since the last fetch."""


class NoBracket(AgecastError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NonProportionalCosts(AgecastError, ValueError):
    """Heterogeneous cost models are not scalar multiples of one base shape."""


class CapExceeded(AgecastError, RuntimeError):
    """The renewal scan ran past its hard cap (threshold effectively infinite)."""


class ConfigError(AgecastError, ValueError):
    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
