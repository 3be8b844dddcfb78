"""Grid sweep over sensitivity parameters and the estimator front-end.

For every candidate ``eta`` the sweep fits the sensitivity model, simulates
``mc_size`` incomplete replicates from the fitted model, averages their KNN
distance to the observed data and computes the permutation ASL.  The
plausible set and the most plausible estimate are read off the resulting
cells.
"""

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from . import rng as rngmod
from ._validation import check_positive_int, check_probability
from .exceptions import (
    FitFailure,
    InvalidArgumentError,
    NoPlausibleModelError,
    SimulationInfeasible,
    SweepFailedError,
)
from .knn import KnnConfig
from .permute import PermutationConfig, permutation_test, plausible_set

logger = logging.getLogger(__name__)


class SensitivityGrid:
    """Ordered, duplicate-free set of candidate sensitivity points.

    Parameters
    ----------
    names : sequence of str
        Coordinate names, e.g. ``("a", "b")`` or ``("eta",)``.
    points : array-like of shape (G, len(names))
    """

    def __init__(self, names, points):
        self.names = tuple(names)
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] != len(self.names):
            raise InvalidArgumentError(
                f"points must have shape (G, {len(self.names)}), got {pts.shape}")
        if len(pts) == 0:
            raise InvalidArgumentError("grid must contain at least one point")
        if not np.isfinite(pts).all():
            raise InvalidArgumentError("grid coordinates must be finite")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise InvalidArgumentError("grid contains duplicate points")
        self.points = pts
        self.points.flags.writeable = False

    @classmethod
    def from_axes(cls, **axes):
        """Cartesian product of per-axis values; the first axis varies slowest."""
        names = list(axes)
        values = [np.atleast_1d(np.asarray(v, dtype=float)) for v in axes.values()]
        pts = np.array(list(itertools.product(*values)), dtype=float)
        return cls(names, pts.reshape(-1, len(names)))

    @classmethod
    def linspace(cls, name, start, stop, num):
        return cls([name], np.linspace(start, stop, int(num))[:, None])

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return (tuple(p) for p in self.points)

    def __repr__(self):
        return f"SensitivityGrid(names={self.names}, size={len(self)})"


@dataclass
class SsaCell:
    """Outcome of one grid point."""

    eta: dict
    fit: object = None
    mean_distance: float = float("nan")
    asl: float = float("nan")
    plausible: bool = False
    error: str = None
    distances: np.ndarray = field(default=None, repr=False)

    @property
    def failed(self):
        return self.error is not None

    @property
    def estimates(self):
        return {} if self.fit is None else dict(self.fit.estimates)


@dataclass(frozen=True)
class SsaConfig:
    mc_size: int = 100
    knn: KnnConfig = KnnConfig()
    perm: PermutationConfig = PermutationConfig()
    alpha: float = 0.05
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        check_positive_int(self.mc_size, "mc_size")
        check_probability(self.alpha, "alpha")
        if int(self.seed) < 0:
            raise InvalidArgumentError("seed must be non-negative")


def evaluate_cell(model, observed, names, eta, cfg):
    """Steps fit -> simulate -> distance -> ASL for a single sensitivity point."""
    eta = tuple(float(v) for v in eta)
    cell = SsaCell(eta=dict(zip(names, eta)))
    k = cfg.knn.k
    try:
        fit = model.fit(eta, observed, rng=rngmod.stream(cfg.seed, rngmod.FIT, 0, eta))
        cell.fit = fit
        obs_view = model.comparison_view(observed)
        reps = []
        for r in range(cfg.mc_size):
            g = rngmod.stream(cfg.seed, rngmod.SIMULATE, r, eta)
            view = model.comparison_view(model.simulate_observed(fit, eta, observed, g))
            if len(view) <= k:
                raise SimulationInfeasible(
                    f"replicate {r} has {len(view)} observed rows, need more than k={k}")
            reps.append(view)
    except (FitFailure, SimulationInfeasible) as exc:
        cell.error = f"{type(exc).__name__}: {exc}"
        logger.debug("cell %s failed: %s", cell.eta, cell.error)
        return cell
    res = permutation_test(
        obs_view, reps, k=k, standardize=cfg.knn.standardize, n_perm=cfg.perm.n_perm,
        mode=cfg.perm.mode, rng=rngmod.stream(cfg.seed, rngmod.PERMUTE, 0, eta))
    cell.mean_distance = res.statistic
    cell.asl = res.asl
    cell.plausible = res.asl > cfg.alpha
    cell.distances = res.distances
    return cell


def run_sweep(model, observed, grid, cfg=SsaConfig()):
    """Evaluate every grid point; cells come back in grid order.

    Failed fits or infeasible simulations yield flagged cells rather than
    aborting the run; :class:`SweepFailedError` is raised only when every
    point fails.
    """
    if not isinstance(grid, SensitivityGrid):
        raise InvalidArgumentError("grid must be a SensitivityGrid")
    if tuple(grid.names) != tuple(model.eta_names):
        raise InvalidArgumentError(
            f"grid axes {grid.names} do not match model parameters {model.eta_names}")
    observed = model.validate(observed)
    if cfg.n_jobs == 1:
        cells = [evaluate_cell(model, observed, grid.names, eta, cfg) for eta in grid]
    else:
        cells = Parallel(n_jobs=cfg.n_jobs)(
            delayed(evaluate_cell)(model, observed, grid.names, eta, cfg) for eta in grid)
    if all(c.failed for c in cells):
        raise SweepFailedError(f"all {len(cells)} grid points failed; first: {cells[0].error}")
    return cells


def most_plausible(cells, alpha=None):
    """Plausible cell with the smallest mean distance (first in grid order on ties)."""
    pool = [c for c in cells if c.plausible and not c.failed] if alpha is None \
        else plausible_set(cells, alpha)
    if not pool:
        raise NoPlausibleModelError("no plausible sensitivity model: every candidate was rejected")
    return min(pool, key=lambda c: c.mean_distance)


def near_minimum_band(cells, tol):
    """Plausible cells whose mean distance is within ``tol`` of the minimum."""
    if tol < 0:
        raise InvalidArgumentError("tol must be non-negative")
    best = most_plausible(cells)
    return [c for c in cells
            if c.plausible and not c.failed and c.mean_distance <= best.mean_distance + tol]


def estimate_ranges(cells):
    """Per-estimate ``(min, max)`` over the given cells."""
    keys = []
    for c in cells:
        for key in c.estimates:
            if key not in keys:
                keys.append(key)
    out = {}
    for key in keys:
        vals = [c.estimates[key] for c in cells if key in c.estimates]
        out[key] = (float(min(vals)), float(max(vals)))
    return out


def summarize(cells, alpha, tol=0.0):
    """Plain-dict summary: plausible set, estimate ranges, most plausible cell, band."""
    plausible = [c for c in cells if c.plausible and not c.failed]
    summary = {
        "alpha": float(alpha),
        "n_cells": len(cells),
        "n_failed": sum(c.failed for c in cells),
        "n_plausible": len(plausible),
        "plausible_eta": [c.eta for c in plausible],
        "plausible_range": estimate_ranges(plausible),
        "most_plausible": None,
        "near_minimum_band": None,
    }
    if plausible:
        best = most_plausible(cells)
        band = near_minimum_band(cells, tol)
        summary["most_plausible"] = {
            "eta": best.eta,
            "estimates": best.estimates,
            "mean_distance": best.mean_distance,
            "asl": best.asl,
        }
        summary["near_minimum_band"] = {
            "tol": float(tol),
            "eta": [c.eta for c in band],
            "range": estimate_ranges(band),
        }
    return summary


class SimulationSensitivityAnalysis(BaseEstimator):
    """Simulation-based sensitivity analysis as a scikit-learn style estimator.

    Parameters
    ----------
    model : SensitivityModel
        Fits the substantive model at a given sensitivity point and simulates
        incomplete data from it.
    grid : SensitivityGrid
        Candidate sensitivity points.
    k : int, default=2
        KNN neighbour order.
    standardize : bool, default=True
        Z-score each compared pair of clouds over their union.
    mc_size : int, default=100
        Simulated replicates per grid point.
    n_perm : int, default=1000
        Permutation draws per grid point.
    perm_mode : {"pooled", "internal"}, default="pooled"
    alpha : float, default=0.05
        Significance level defining the plausible set.
    random_state : int, default=0
        Master seed; all streams are derived from it.
    n_jobs : int, default=1
        Workers for grid points; results do not depend on it.

    Attributes
    ----------
    cells_ : list of SsaCell
    plausible_ : list of SsaCell
    most_plausible_ : SsaCell or None
        ``None`` when every candidate was rejected.
    """

    def __init__(self, model, grid, *, k=2, standardize=True, mc_size=100, n_perm=1000,
                 perm_mode="pooled", alpha=0.05, random_state=0, n_jobs=1):
        self.model = model
        self.grid = grid
        self.k = k
        self.standardize = standardize
        self.mc_size = mc_size
        self.n_perm = n_perm
        self.perm_mode = perm_mode
        self.alpha = alpha
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self):
        return SsaConfig(
            mc_size=self.mc_size,
            knn=KnnConfig(self.k, self.standardize),
            perm=PermutationConfig(self.n_perm, self.perm_mode),
            alpha=self.alpha,
            seed=self.random_state,
            n_jobs=self.n_jobs,
        )

    def fit(self, X, y=None):
        """Run the sweep on incomplete data ``X`` (missing entries as NaN)."""
        self.cells_ = run_sweep(self.model, X, self.grid, self._config())
        self.plausible_ = [c for c in self.cells_ if c.plausible]
        try:
            self.most_plausible_ = most_plausible(self.cells_)
        except NoPlausibleModelError:
            self.most_plausible_ = None
        return self

    def summary(self, tol=0.0):
        return summarize(self.cells_, self.alpha, tol)
