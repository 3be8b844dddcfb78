"""Copas selection model for publication bias in random-effects meta-analysis.

Study ``i`` reports an effect ``y_i`` with standard error ``s_i``::

    y_i = mu + tau * u_i + s_i * eps_i
    z_i = a + b / s_i + delta_i,     corr(eps_i, delta_i) = rho

and is published only when ``z_i > 0``.  The sensitivity parameters are
``(a, b)``; given them, ``(mu, tau2, rho)`` are estimated by maximising the
likelihood of the published studies.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.special import log_ndtr, ndtr

from ..exceptions import FitFailure, InvalidDataError, SimulationInfeasible
from .base import FitResult, SensitivityModel

TRANSFORM_BOUND = 20.0
MIN_ACCEPTANCE = 1e-4


@dataclass(frozen=True)
class MetaDataset:
    y: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        s = np.asarray(self.s, dtype=float).ravel()
        if y.shape != s.shape:
            raise InvalidDataError("y and s must have the same length")
        if len(y) < 2:
            raise InvalidDataError("a meta-analysis needs at least two studies")
        bad = np.flatnonzero(~np.isfinite(y) | ~np.isfinite(s))
        if bad.size:
            raise InvalidDataError(f"non-finite value in study row {bad[0]}")
        bad = np.flatnonzero(s <= 0)
        if bad.size:
            raise InvalidDataError(f"standard error must be positive (row {bad[0]}: s={s[bad[0]]})")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "s", s)

    def __len__(self):
        return len(self.y)


@dataclass
class MetaFit:
    mu: float
    tau2: float
    rho: float
    loglik: float
    converged: bool
    diagnostics: dict = field(default_factory=dict)


def _terms(y, s, mu, tau2, rho, a, b, one_minus_rho2=None):
    tot = tau2 + s * s
    root = np.sqrt(tot)
    if one_minus_rho2 is None:
        one_minus_rho2 = 1.0 - rho * rho
    rho_t = s * rho / root
    # 1 - rho_t^2 written so that it stays positive as |rho| -> 1
    one_minus_rt2 = (tau2 + s * s * one_minus_rho2) / tot
    u = a + b / s
    v = (u + rho_t * (y - mu) / root) / np.sqrt(one_minus_rt2)
    return -0.5 * np.log(tot) - (y - mu) ** 2 / (2.0 * tot) - log_ndtr(u) + log_ndtr(v)


def copas_loglik(data, mu, tau2, rho, a, b):
    """Log-likelihood of the published studies (additive constants dropped).

    ``sum_i [-log(tau2 + s_i^2)/2 - (y_i - mu)^2 / (2 (tau2 + s_i^2))
    - log Phi(a + b/s_i) + log Phi(v_i)]`` where ``v_i`` is the standardised
    selection index given ``y_i``.  ``log Phi`` is evaluated with
    ``scipy.special.log_ndtr`` so far tails stay finite.
    """
    if tau2 < 0:
        raise ValueError("tau2 must be non-negative")
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must lie in (-1, 1)")
    return float(np.sum(_terms(data.y, data.s, mu, tau2, rho, a, b)))


def random_effects_loglik(data, mu, tau2):
    """Normal random-effects log-likelihood with the same constants dropped."""
    tot = tau2 + data.s ** 2
    return float(np.sum(-0.5 * np.log(tot) - (data.y - mu) ** 2 / (2.0 * tot)))


def fit_random_effects(data):
    """Random-effects MLE of ``(mu, tau2)``, no selection.  Returns ``(mu, tau2)``."""
    def profile_mu(tau2):
        w = 1.0 / (tau2 + data.s ** 2)
        return np.sum(w * data.y) / np.sum(w)

    upper = max(10.0 * np.var(data.y), 1e-6)
    res = minimize_scalar(lambda t2: -random_effects_loglik(data, profile_mu(t2), t2),
                          bounds=(0.0, upper), method="bounded",
                          options={"xatol": 1e-12})
    tau2 = float(res.x)
    # the bounded search never lands exactly on 0
    if random_effects_loglik(data, profile_mu(0.0), 0.0) >= -res.fun:
        tau2 = 0.0
    return float(profile_mu(tau2)), tau2


def _start_points(data):
    w = 1.0 / data.s ** 2
    mu0 = float(np.sum(w * data.y) / np.sum(w))
    sd = float(np.std(data.y)) or 0.1
    excess = float(np.var(data.y) - np.mean(data.s ** 2))
    lt0 = np.log(max(excess, 1e-2))
    return [
        (mu0, lt0, 0.0),
        (mu0, np.log(1e-2), 0.5),
        (mu0, np.log(1e-2), -0.5),
        (mu0 - sd, lt0, 1.0),
        (mu0 + sd, np.log(0.1), 1.5),
    ]


def fit_copas(data, a, b):
    """Maximise the Copas likelihood over ``(mu, tau2, rho)`` for fixed ``(a, b)``.

    Nelder-Mead on ``(mu, log tau2, atanh rho)`` from five fixed starts, each
    restarted once from its optimum.  The transformed ``log tau2`` and
    ``atanh rho`` are boxed to ``[-20, 20]``; a best point on the ``rho`` box
    or on the upper ``tau2`` box reports ``converged=False``.  The lower
    ``tau2`` box is the ordinary ``tau2 = 0`` boundary solution.
    """
    y, s = data.y, data.s

    def objective(p):
        mu, lt, t = p
        tau2 = np.exp(lt)
        rho = np.tanh(t)
        val = np.sum(_terms(y, s, mu, tau2, rho, a, b, one_minus_rho2=1.0 / np.cosh(t) ** 2))
        return -val if np.isfinite(val) else np.inf

    bounds = [(None, None), (-TRANSFORM_BOUND, TRANSFORM_BOUND),
              (-TRANSFORM_BOUND, TRANSFORM_BOUND)]
    opts = {"xatol": 1e-10, "fatol": 1e-12, "maxiter": 6000, "maxfev": 12000}
    best = None
    failures = []
    for x0 in _start_points(data):
        try:
            res = minimize(objective, x0, method="Nelder-Mead", bounds=bounds, options=opts)
            res = minimize(objective, res.x, method="Nelder-Mead", bounds=bounds, options=opts)
        except (FloatingPointError, ValueError) as exc:
            failures.append(str(exc))
            continue
        if not np.isfinite(res.fun):
            failures.append(f"non-finite objective from start {x0}")
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise FitFailure(f"Copas fit failed from every start at a={a}, b={b}",
                         {"a": a, "b": b, "failures": failures})
    mu, lt, t = best.x
    edge = TRANSFORM_BOUND - 1e-6
    at_bound = bool(abs(t) >= edge or lt >= edge)
    return MetaFit(
        mu=float(mu),
        tau2=float(np.exp(lt)) if lt > -edge else 0.0,
        rho=float(np.tanh(t)),
        loglik=float(-best.fun),
        converged=bool(best.success and not at_bound),
        diagnostics={"nfev": int(best.nfev), "at_bound": at_bound,
                     "transformed": [float(v) for v in best.x]},
    )


def selection_probability(s, a, b):
    """Marginal publication probability ``Phi(a + b/s)``."""
    return ndtr(a + b / np.asarray(s, dtype=float))


def draw_candidates(fit, a, b, s_pool, m, rng):
    """``m`` candidate studies from the fitted model; returns ``(y, s, published)``."""
    tau = np.sqrt(fit.tau2)
    rho = fit.rho
    c = np.sqrt(max(1.0 - rho * rho, 0.0))
    s = rng.choice(np.asarray(s_pool, dtype=float), size=m)
    u, eps, xi = rng.standard_normal((3, m))
    y = fit.mu + tau * u + s * eps
    z = a + b / s + rho * eps + c * xi
    return y, s, z > 0


def simulate_selected(fit, a, b, s_pool, n_target, rng):
    """Simulate studies from the fitted model until ``n_target`` are published.

    Standard errors are bootstrapped from ``s_pool``; each candidate study is
    published iff its selection index is positive.
    """
    s_pool = np.asarray(s_pool, dtype=float)
    accept = float(np.mean(selection_probability(s_pool, a, b)))
    if accept < MIN_ACCEPTANCE:
        raise SimulationInfeasible(
            f"publication probability {accept:.2e} too small at a={a}, b={b}")
    ys, ss = [], []
    kept = 0
    while kept < n_target:
        m = int(np.ceil(1.2 * (n_target - kept) / accept)) + 8
        y, s, keep = draw_candidates(fit, a, b, s_pool, m, rng)
        ys.append(y[keep])
        ss.append(s[keep])
        kept += int(keep.sum())
    y = np.concatenate(ys)[:n_target]
    s = np.concatenate(ss)[:n_target]
    return MetaDataset(y, s)


class CopasModel(SensitivityModel):
    """Copas publication-bias model with sensitivity parameters ``(a, b)``.

    Input ``X`` is an ``(n, 2)`` array of ``(y, s)`` or a :class:`MetaDataset`.
    Studies are compared on the funnel-plot coordinates ``(y, 1/s)``.
    """

    eta_names = ("a", "b")

    def validate(self, X):
        if isinstance(X, MetaDataset):
            return X
        arr = np.asarray(X, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise InvalidDataError(f"expected an (n, 2) array of (y, s), got shape {arr.shape}")
        return MetaDataset(arr[:, 0], arr[:, 1])

    def fit(self, eta, data, rng=None):
        a, b = eta
        f = fit_copas(data, a, b)
        return FitResult(
            estimates={"mu": f.mu},
            detail=f,
            loglik=f.loglik,
            converged=f.converged,
            diagnostics={"tau2": f.tau2, "rho": f.rho},
        )

    def simulate_observed(self, fit, eta, data, rng):
        a, b = eta
        return simulate_selected(fit.detail, a, b, data.s, len(data), rng)

    def comparison_view(self, data):
        return np.column_stack([data.y, 1.0 / data.s])
