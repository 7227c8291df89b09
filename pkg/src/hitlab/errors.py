"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class HitlabError(Exception):
    exit_code = 1


class ChainSpecError(HitlabError, ValueError):
    """Chain document is malformed or describes an invalid chain."""

    exit_code = 2


class NonPrimitiveError(HitlabError, ValueError):
    """The transient block is reducible or periodic."""

    exit_code = 3


class ConvergenceError(HitlabError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    exit_code = 4

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ResidualError(HitlabError, ArithmeticError):
    """A computed identity failed its numerical tolerance."""

    exit_code = 5


class SimulationError(HitlabError, RuntimeError):
    """Monte Carlo run could not produce usable samples (e.g. heavy censoring)."""

    exit_code = 5
