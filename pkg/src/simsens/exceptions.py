"""Exception hierarchy shared by every module."""


class SimsensError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SimsensError, ValueError):
    """An argument is outside its documented domain (k too large, empty lists, ...)."""


class InvalidDataError(SimsensError, ValueError):
    """Input data violate a schema or numeric requirement."""


class FitFailure(SimsensError, RuntimeError):
    """A model could not be fitted at the requested sensitivity parameter."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class SimulationInfeasible(SimsensError, RuntimeError):
    """The simulated observed data cannot be produced (e.g. selection probability ~ 0)."""


class DegenerateWeightsError(SimsensError, RuntimeError):
    """Exponential-tilt weights collapsed numerically."""


class InsufficientDataError(SimsensError, ValueError):
    """Too few observed rows to fit a required conditional model."""


class NoPlausibleModelError(SimsensError, LookupError):
    """Every candidate sensitivity model was rejected by the permutation test."""


class SweepFailedError(SimsensError, RuntimeError):
    """Every grid point of a sweep failed to fit or simulate."""
