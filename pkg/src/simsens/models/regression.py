"""Linear regression with one covariate missing not at random.

Model ``t = theta_0 + theta_1 x1 + theta_2 x2 + theta_3 x3 + theta_4 x4 + eps``
with ``x2`` partly missing and ``P(R=1 | D) = expit(h(t, x1, x3, x4) + eta x2)``.
Given ``eta`` the missing ``x2`` follow the complete-case conditional
``N(gamma' z, tau2)`` tilted by ``exp(-eta x2)``, i.e. ``N(gamma' z - eta tau2, tau2)``.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .. import rng as rngmod
from ..engine import SensitivityGrid, SsaConfig, most_plausible, run_sweep
from ..exceptions import FitFailure, InsufficientDataError, InvalidDataError, NoPlausibleModelError
from ..knn import KnnConfig
from ..permute import PermutationConfig
from .base import FitResult, SensitivityModel, expit
from .longitudinal import tilted_conditional

COLUMNS = ("t", "x1", "x2", "x3", "x4")
MIN_COMPLETE = 10

# Marginal summaries of the 2001 US state fuel data (Weisberg, 2005) used to
# build a synthetic stand-in: log2(miles), income / 1000, licences per 1000, tax.
_FUEL_MEANS = np.array([15.74, 28.40, 903.68, 20.16])
_FUEL_SDS = np.array([1.49, 4.45, 72.86, 4.54])
FUEL_THETA = np.array([154.19, 18.55, -6.14, 0.47, -4.23])
FUEL_SIGMA = 64.89


@dataclass(frozen=True)
class RegressionDataset:
    """Response ``t`` and covariates ``x`` of shape (n, 4); NaN in ``x[:, 1]`` marks missing ``x2``."""

    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2 or x.shape != (len(t), 4):
            raise InvalidDataError(f"x must have shape ({len(t)}, 4), got {x.shape}")
        bad = np.flatnonzero(~np.isfinite(t))
        if bad.size:
            raise InvalidDataError(f"t must be finite (row {bad[0]})")
        for col, name in ((0, "x1"), (2, "x3"), (3, "x4")):
            bad = np.flatnonzero(~np.isfinite(x[:, col]))
            if bad.size:
                raise InvalidDataError(f"{name} must be observed and finite (row {bad[0]})")
        if np.isinf(x[:, 1]).any():
            raise InvalidDataError("x2 contains infinite values")
        t.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)

    @property
    def observed(self):
        """Response indicator for ``x2``."""
        return ~np.isnan(self.x[:, 1])

    @property
    def z(self):
        """Always-observed regressors of the ``x2`` conditional: ``(t, x1, x3, x4)``."""
        return np.column_stack([self.t, self.x[:, 0], self.x[:, 2], self.x[:, 3]])

    def with_x2(self, x2):
        x = self.x.copy()
        x[:, 1] = x2
        return RegressionDataset(self.t, x)

    def __len__(self):
        return len(self.t)


@dataclass
class ConditionalFit:
    gamma: np.ndarray
    tau2: float
    degenerate: bool = False


@dataclass
class OlsFit:
    coef: np.ndarray
    sigma2: float
    se: np.ndarray


@dataclass
class RegressionFit:
    """Fit at one ``eta``: ``theta`` and ``sigma2`` are averaged over imputations."""

    theta: np.ndarray
    sigma2: float
    gamma: np.ndarray
    tau2: float
    se: np.ndarray = None
    n_imputations: int = 1


def _design(cols):
    return np.column_stack([np.ones(len(cols)), cols])


def ols(X, y):
    """OLS with intercept prepended; ``sigma2`` uses the ``n - p`` denominator."""
    A = _design(X)
    n, p = A.shape
    if n <= p or np.linalg.matrix_rank(A) < p:
        raise FitFailure("rank-deficient design", {"n": n, "p": p})
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    sigma2 = float(resid @ resid / (n - p))
    cov = sigma2 * np.linalg.inv(A.T @ A)
    return OlsFit(coef=coef, sigma2=sigma2, se=np.sqrt(np.diag(cov)))


def fit_conditional_covariate(data):
    """OLS of ``x2`` on ``(1, t, x1, x3, x4)`` over complete cases."""
    obs = data.observed
    if obs.sum() < MIN_COMPLETE:
        raise InsufficientDataError(f"{int(obs.sum())} complete cases, need {MIN_COMPLETE}")
    f = ols(data.z[obs], data.x[obs, 1])
    scale = max(1.0, float(np.mean(data.x[obs, 1] ** 2)))
    degenerate = f.sigma2 <= 1e-20 * scale
    return ConditionalFit(gamma=f.coef, tau2=0.0 if degenerate else f.sigma2, degenerate=degenerate)


def impute_covariate(data, cond, eta, rng):
    """Completed ``x2`` column; missing rows drawn from ``N(gamma' z - eta tau2, tau2)``."""
    x2 = data.x[:, 1].copy()
    miss = ~data.observed
    if miss.any():
        m = _design(data.z[miss]) @ cond.gamma
        mean, var = (m, 0.0) if cond.tau2 == 0 else tilted_conditional(m, cond.tau2, eta)
        x2[miss] = mean + np.sqrt(var) * rng.standard_normal(int(miss.sum()))
    return x2


def simulate_observed_regression(data, eta, rng, cond=None):
    """Impute, refit the outcome model and redraw ``t`` with normal residuals.

    Returns the simulated dataset; ``t`` is replaced by ``t*`` and ``x2`` by the
    completed column.
    """
    cond = fit_conditional_covariate(data) if cond is None else cond
    x2 = impute_covariate(data, cond, eta, rng)
    X = np.column_stack([data.x[:, 0], x2, data.x[:, 2], data.x[:, 3]])
    f = ols(X, data.t)
    t_star = _design(X) @ f.coef + np.sqrt(f.sigma2) * rng.standard_normal(len(data))
    return RegressionDataset(t_star, X)


def mnar_mask_generator(data, rng):
    """Missingness of ``x2`` with ``P(R=0) = 1 - expit(1 + (x1 - mean x1) - 0.5 (x2 - mean x2))``.

    Returns a boolean array, ``True`` where ``x2`` is to be deleted.
    """
    x1, x2 = data.x[:, 0], data.x[:, 1]
    if np.isnan(x2).any():
        raise InvalidDataError("the mask generator needs a fully observed x2")
    p_miss = mnar_missing_prob(x1, x2, x1.mean(), x2.mean())
    return rng.random(len(data)) < p_miss


def mnar_missing_prob(x1, x2, x1_bar, x2_bar):
    return 1.0 - expit(1.0 + (np.asarray(x1) - x1_bar) - 0.5 * (np.asarray(x2) - x2_bar))


class RegressionModel(SensitivityModel):
    """Missing-covariate regression with sensitivity parameter ``eta``.

    Parameters
    ----------
    n_imputations : int, default=20
        Imputations averaged to report ``theta`` at each ``eta``.

    Data are compared on ``(t, x1, x3, x4)`` over all rows; ``x2`` is left out.
    """

    eta_names = ("eta",)

    def __init__(self, n_imputations=20):
        self.n_imputations = n_imputations

    def validate(self, X):
        if isinstance(X, RegressionDataset):
            return X
        arr = np.asarray(X, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 5:
            raise InvalidDataError(f"expected an (n, 5) array of {COLUMNS}, got shape {arr.shape}")
        return RegressionDataset(arr[:, 0], arr[:, 1:])

    def fit(self, eta, data, rng=None):
        (eta,) = eta
        rng = np.random.default_rng(0) if rng is None else rng
        cond = fit_conditional_covariate(data)
        fits = []
        for _ in range(self.n_imputations):
            x2 = impute_covariate(data, cond, eta, rng)
            fits.append(ols(np.column_stack([data.x[:, 0], x2, data.x[:, 2], data.x[:, 3]]),
                            data.t))
        theta = np.mean([f.coef for f in fits], axis=0)
        se = np.mean([f.se for f in fits], axis=0)
        detail = RegressionFit(theta=theta, sigma2=float(np.mean([f.sigma2 for f in fits])),
                               gamma=cond.gamma, tau2=cond.tau2, se=se,
                               n_imputations=self.n_imputations)
        diagnostics = {f"se_{j}": float(v) for j, v in enumerate(se)}
        diagnostics.update(sigma2=detail.sigma2, tau2=cond.tau2, degenerate=cond.degenerate)
        return FitResult(estimates={f"theta_{j}": float(v) for j, v in enumerate(theta)},
                         detail=detail, diagnostics=diagnostics)

    def simulate_observed(self, fit, eta, data, rng):
        (eta,) = eta
        cond = ConditionalFit(fit.detail.gamma, fit.detail.tau2)
        return simulate_observed_regression(data, eta, rng, cond)

    def comparison_view(self, data):
        return data.z


def fuel_like_dataset(seed=0, n=51, theta=FUEL_THETA, sigma=FUEL_SIGMA):
    """Synthetic complete data shaped like the 2001 state fuel data.

    Covariates are independent normals with the real data's means and SDs.
    Residuals are projected off the design and rescaled, so complete-data OLS
    returns exactly ``theta`` and residual SD ``sigma``.
    """
    g = rngmod.stream(seed, rngmod.REPLICATION, 10**6)
    x = _FUEL_MEANS + _FUEL_SDS * g.standard_normal((n, 4))
    A = _design(x)
    e = g.standard_normal(n)
    e -= A @ np.linalg.lstsq(A, e, rcond=None)[0]
    e *= sigma * np.sqrt((n - A.shape[1]) / (e @ e))
    return RegressionDataset(A @ np.asarray(theta, dtype=float) + e, x)


@dataclass
class RegressionStudySettings:
    """Repeated MNAR masking of one complete dataset, then SSA on each."""

    grid: tuple = field(default_factory=lambda: tuple(np.round(np.arange(-25, 26) * 0.2, 10)))
    k: int = 2
    mc_size: int = 100
    n_perm: int = 1000
    alpha: float = 0.05
    replications: int = 100
    n_imputations: int = 20
    standardize: bool = True


def _one_regression_replication(complete, settings, seed, index):
    g = rngmod.stream(seed, rngmod.MASK, index)
    mask = mnar_mask_generator(complete, g)
    x2 = complete.x[:, 1].copy()
    x2[mask] = np.nan
    data = complete.with_x2(x2)
    cfg = SsaConfig(
        mc_size=settings.mc_size,
        knn=KnnConfig(settings.k, settings.standardize),
        perm=PermutationConfig(settings.n_perm),
        alpha=settings.alpha,
        seed=rngmod.derive_seed(seed, rngmod.REPLICATION, index),
    )
    grid = SensitivityGrid(["eta"], np.asarray(settings.grid, dtype=float)[:, None])
    row = {"replication": index, "n_missing": int(mask.sum()), "selected_eta": np.nan}
    row.update({f"theta_{j}": np.nan for j in range(5)})
    row.update({f"se_{j}": np.nan for j in range(5)})
    cells = run_sweep(RegressionModel(settings.n_imputations), data, grid, cfg)
    try:
        best = most_plausible(cells)
    except NoPlausibleModelError:
        return row
    row["selected_eta"] = best.eta["eta"]
    row.update(best.estimates)
    row.update({f"se_{j}": best.fit.diagnostics[f"se_{j}"] for j in range(5)})
    return row


def run_regression_study(complete=None, settings=RegressionStudySettings(), seed=0, n_jobs=1):
    """SSA on repeated MNAR masks of ``complete`` (fuel-like synthetic data by default).

    Returns
    -------
    rows : list of dict
    summary : dict
        Complete-data OLS, the average most plausible ``theta``, its
        across-replication SD (``sd_theta``) and the average model-based
        standard error (``avg_model_se``).
    """
    complete = fuel_like_dataset(seed) if complete is None else complete
    if not complete.observed.all():
        raise InvalidDataError("the study needs a fully observed dataset")
    if n_jobs == 1:
        rows = [_one_regression_replication(complete, settings, seed, i)
                for i in range(settings.replications)]
    else:
        rows = Parallel(n_jobs=n_jobs)(
            delayed(_one_regression_replication)(complete, settings, seed, i)
            for i in range(settings.replications))
    full = ols(complete.x, complete.t)
    sel = [r for r in rows if np.isfinite(r["selected_eta"])]
    theta = np.array([[r[f"theta_{j}"] for j in range(5)] for r in sel]).reshape(-1, 5)
    se = np.array([[r[f"se_{j}"] for j in range(5)] for r in sel]).reshape(-1, 5)
    sd = theta.std(axis=0, ddof=1) if len(sel) > 1 else np.full(5, np.nan)
    summary = {
        "replications": len(rows),
        "n_without_plausible": len(rows) - len(sel),
        "complete_data_theta": full.coef.tolist(),
        "complete_data_se": full.se.tolist(),
        "avg_theta": theta.mean(axis=0).tolist() if len(sel) else [np.nan] * 5,
        "sd_theta": sd.tolist(),
        "avg_model_se": se.mean(axis=0).tolist() if len(sel) else [np.nan] * 5,
        "avg_selected_eta": float(np.mean([r["selected_eta"] for r in sel])) if sel else np.nan,
        "avg_missing_fraction": float(np.mean([r["n_missing"] for r in rows]) / len(complete)),
        "settings": {k: (list(v) if isinstance(v, tuple) else v)
                     for k, v in asdict(settings).items()},
    }
    return rows, summary
