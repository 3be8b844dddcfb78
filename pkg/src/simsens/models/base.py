"""Contract between the sweep engine and a concrete sensitivity model."""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np


@dataclass
class FitResult:
    """What the engine keeps from a model fit at one sensitivity point.

    ``estimates`` holds the quantities of interest that are reported and
    ranged over the plausible set; ``detail`` is the model-specific fit.
    """

    estimates: dict
    detail: object = None
    loglik: float = None
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)


def expit(x):
    """Overflow-safe logistic function."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


class SensitivityModel(ABC):
    """A sensitivity model ``f(D, R; theta, eta)`` usable by the sweep.

    Implementations must be stateless with respect to a sweep (configuration
    only) so they can be shared read-only across workers.
    """

    #: names of the sensitivity-parameter coordinates, in grid order
    eta_names = ("eta",)

    @abstractmethod
    def validate(self, X):
        """Coerce raw input into the model's dataset type."""

    @abstractmethod
    def fit(self, eta, data, rng=None):
        """Estimate the model at sensitivity point ``eta`` -> :class:`FitResult`."""

    @abstractmethod
    def simulate_observed(self, fit, eta, data, rng):
        """Simulate one incomplete dataset comparable to ``data``."""

    @abstractmethod
    def comparison_view(self, data):
        """Point cloud (n, dim) on which simulated and observed data are compared."""
