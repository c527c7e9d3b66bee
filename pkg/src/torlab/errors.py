"""Exception hierarchy shared by all torlab modules."""


class TorlabError(Exception):
    """Base class for every error raised by torlab."""


class ConfigurationError(TorlabError, ValueError):
    """Invalid parameters: grid sizes, (n, k) pairs, config files."""


class ValidationError(TorlabError, ValueError):
    """Input geometry violates an invariant (positivity, strict convexity)."""


class SolverError(TorlabError, RuntimeError):
    """Nonlinear solve failed; ``residual`` holds the last residual norm."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class RangeError(TorlabError, ValueError):
    """Family parameter outside the range where members stay valid."""


class StiffnessError(TorlabError, RuntimeError):
    """Time step underflow in the flow integrator."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record or {}
