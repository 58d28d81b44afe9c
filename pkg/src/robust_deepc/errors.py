"""Exception types shared across the package."""


class RobustDeepcError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(RobustDeepcError):
    """Malformed input: dimension mismatch, non-finite entries, bad options."""


class ExcitationError(RobustDeepcError):
    """An input signal failed a persistency-of-excitation requirement."""


class InfeasibleProblemError(RobustDeepcError):
    """An optimization problem was certified infeasible."""


class UnsupportedObjectiveError(RobustDeepcError):
    """Objective outside the supported family (analytic regularizer unknown)."""


class NumericalFailureError(RobustDeepcError):
    """A numerical routine failed to converge.

    ``best`` carries the last iterate when a solver hits its iteration cap,
    so callers can inspect or reuse it as a fallback.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConfigError(RobustDeepcError):
    """Invalid experiment configuration (maps to CLI exit code 2)."""
