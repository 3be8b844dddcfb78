"""Mean estimation when a variable is missing with probability ``expit(eta (x + lam))``.

The missing-part density is the observed-part density tilted by
``exp(-eta (x + lam))``; the observed part is represented by its empirical
distribution, so imputation is weighted resampling of the observed values.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.special import logsumexp

from .. import rng as rngmod
from ..engine import SensitivityGrid, SsaConfig, most_plausible, run_sweep
from ..exceptions import (
    DegenerateWeightsError,
    InvalidDataError,
    NoPlausibleModelError,
    SimulationInfeasible,
)
from ..knn import KnnConfig
from ..permute import PermutationConfig
from .base import FitResult, SensitivityModel, expit


@dataclass(frozen=True)
class UnivariateIncomplete:
    x_obs: np.ndarray
    n_missing: int
    lam: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x_obs, dtype=float).ravel()
        if x.size == 0:
            raise InvalidDataError("no observed values")
        if not np.isfinite(x).all():
            raise InvalidDataError("observed values must be finite")
        if int(self.n_missing) < 0:
            raise InvalidDataError("n_missing must be non-negative")
        object.__setattr__(self, "x_obs", x)
        object.__setattr__(self, "n_missing", int(self.n_missing))
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def n(self):
        return len(self.x_obs) + self.n_missing

    @classmethod
    def from_array(cls, x, lam=0.0):
        """Build from a 1-D array where NaN marks a missing value."""
        x = np.asarray(x, dtype=float).ravel()
        miss = np.isnan(x)
        return cls(x[~miss], int(miss.sum()), lam)


@dataclass
class MeanFit:
    mu_hat: float
    mu1: float
    mu2_hat: float
    pi_hat: float


def mdm_prob(x, eta, lam=0.0):
    """Probability of being observed, ``expit(eta (x + lam))``."""
    return expit(eta * (np.asarray(x, dtype=float) + lam))


def _log_tilt_weights(data, eta):
    with np.errstate(over="ignore", invalid="ignore"):
        logw = -eta * (data.x_obs + data.lam)
    if not np.isfinite(logw).all():
        raise DegenerateWeightsError(f"tilt weights are not finite at eta={eta}")
    return logw - logsumexp(logw)


def estimate_mu2(data, eta):
    """Mean of the missing part: observed values weighted by ``exp(-eta (x + lam))``."""
    w = np.exp(_log_tilt_weights(data, eta))
    return float(np.sum(w * data.x_obs))


def fit_mean(data, eta):
    pi_hat = len(data.x_obs) / data.n
    mu1 = float(np.mean(data.x_obs))
    mu2 = estimate_mu2(data, eta) if data.n_missing else mu1
    return MeanFit(mu_hat=pi_hat * mu1 + (1.0 - pi_hat) * mu2, mu1=mu1, mu2_hat=mu2, pi_hat=pi_hat)


def silverman_bandwidth(x):
    x = np.asarray(x, dtype=float)
    sd = np.std(x, ddof=1) if len(x) > 1 else 0.0
    iqr = np.subtract(*np.percentile(x, [75, 25])) / 1.349 if len(x) > 1 else 0.0
    spread = min(sd, iqr) if iqr > 0 else sd
    return 0.9 * spread * len(x) ** -0.2


def impute_missing(data, eta, rng, bandwidth=0.0):
    """Draw ``n_missing`` values from the tilted observed-value distribution.

    With ``bandwidth > 0`` the observed distribution is a Gaussian kernel
    estimate instead; its exact tilt keeps the resampling weights and shifts
    every kernel by ``-eta * bandwidth**2``.
    """
    w = np.exp(_log_tilt_weights(data, eta))
    idx = rng.choice(len(data.x_obs), size=data.n_missing, p=w)
    x = data.x_obs[idx]
    if bandwidth > 0:
        x = x - eta * bandwidth ** 2 + bandwidth * rng.standard_normal(data.n_missing)
    return x


class MeanModel(SensitivityModel):
    """Logistic non-ignorable missingness in a single variable.

    Parameters
    ----------
    lam : float
        Known offset in the missingness model.
    smoothing : None, "silverman" or float
        Kernel bandwidth for the observed-part density; ``None`` resamples
        observed values directly.
    """

    eta_names = ("eta",)

    def __init__(self, lam=0.0, smoothing=None):
        self.lam = lam
        self.smoothing = smoothing

    def validate(self, X):
        if isinstance(X, UnivariateIncomplete):
            return X
        return UnivariateIncomplete.from_array(X, self.lam)

    def _bandwidth(self, data):
        if self.smoothing is None:
            return 0.0
        if self.smoothing == "silverman":
            return silverman_bandwidth(data.x_obs)
        return float(self.smoothing)

    def fit(self, eta, data, rng=None):
        (eta,) = eta
        f = fit_mean(data, eta)
        return FitResult(estimates={"mu": f.mu_hat}, detail=f)

    def simulate_observed(self, fit, eta, data, rng):
        (eta,) = eta
        imputed = impute_missing(data, eta, rng, self._bandwidth(data))
        complete = np.concatenate([data.x_obs, imputed])
        seen = rng.random(len(complete)) < mdm_prob(complete, eta, data.lam)
        if not seen.any():
            raise SimulationInfeasible(f"no simulated value observed at eta={eta}")
        return UnivariateIncomplete(complete[seen], int((~seen).sum()), data.lam)

    def comparison_view(self, data):
        return data.x_obs[:, None]


@dataclass
class MeanStudySettings:
    """Settings of the repeated-sampling study of the mean estimator."""

    n: int = 100
    mu: float = 0.0
    sigma2: float = 1.0
    eta: float = -1.0
    lam: float = 0.0
    grid: tuple = field(default_factory=lambda: tuple(np.round(np.linspace(-5, 5, 101), 10)))
    k: int = 2
    mc_size: int = 100
    n_perm: int = 1000
    alpha: float = 0.05
    replications: int = 500
    smoothing: object = None
    standardize: bool = True


def _one_replication(settings, seed, index):
    g = rngmod.stream(seed, rngmod.REPLICATION, index)
    x = g.normal(settings.mu, np.sqrt(settings.sigma2), settings.n)
    seen = g.random(settings.n) < mdm_prob(x, settings.eta, settings.lam)
    data = UnivariateIncomplete(x[seen], int((~seen).sum()), settings.lam)
    cfg = SsaConfig(
        mc_size=settings.mc_size,
        knn=KnnConfig(settings.k, settings.standardize),
        perm=PermutationConfig(settings.n_perm),
        alpha=settings.alpha,
        seed=rngmod.derive_seed(seed, rngmod.REPLICATION, index),
    )
    grid = SensitivityGrid(["eta"], np.asarray(settings.grid, dtype=float)[:, None])
    cells = run_sweep(MeanModel(settings.lam, settings.smoothing), data, grid, cfg)
    row = {
        "replication": index,
        "n_observed": len(data.x_obs),
        "complete_case_mean": float(np.mean(data.x_obs)),
        "selected_eta": np.nan,
        "mu_hat": np.nan,
        "plausible_lo": np.nan,
        "plausible_hi": np.nan,
        "n_plausible": 0,
        "covered": False,
    }
    try:
        best = most_plausible(cells)
    except NoPlausibleModelError:
        return row
    mus = [c.estimates["mu"] for c in cells if c.plausible]
    row.update(
        selected_eta=best.eta["eta"],
        mu_hat=best.estimates["mu"],
        plausible_lo=min(mus),
        plausible_hi=max(mus),
        n_plausible=len(mus),
        covered=bool(min(mus) <= settings.mu <= max(mus)),
    )
    return row


def run_mean_study(settings=MeanStudySettings(), seed=0, n_jobs=1):
    """Repeat generate -> MNAR mask -> sweep -> select, and summarise.

    Returns
    -------
    rows : list of dict
        One record per replication.
    summary : dict
        Averages and SDs of the most plausible ``mu`` and ``eta``, the
        coverage of the true mean by the plausible-set range, and the
        complete-case mean for reference.
    """
    if n_jobs == 1:
        rows = [_one_replication(settings, seed, i) for i in range(settings.replications)]
    else:
        rows = Parallel(n_jobs=n_jobs)(
            delayed(_one_replication)(settings, seed, i) for i in range(settings.replications))
    return rows, summarize_mean_study(rows, settings)


def summarize_mean_study(rows, settings):
    sel = [r for r in rows if r["n_plausible"] > 0]
    mu_hat = np.array([r["mu_hat"] for r in sel])
    eta_hat = np.array([r["selected_eta"] for r in sel])

    def _sd(v):
        return float(np.std(v, ddof=1)) if len(v) > 1 else float("nan")

    return {
        "replications": len(rows),
        "n_without_plausible": len(rows) - len(sel),
        "avg_mu_hat": float(mu_hat.mean()) if len(sel) else float("nan"),
        "sd_mu_hat": _sd(mu_hat),
        "avg_selected_eta": float(eta_hat.mean()) if len(sel) else float("nan"),
        "sd_selected_eta": _sd(eta_hat),
        "coverage": float(np.mean([r["covered"] for r in rows])),
        "avg_complete_case_mean": float(np.mean([r["complete_case_mean"] for r in rows])),
        "settings": {k: (list(v) if isinstance(v, tuple) else v)
                     for k, v in asdict(settings).items()},
    }
