"""Monotone dropout in repeated measures.

The probability of remaining in the study at visit ``j`` is
``expit(beta0 + beta1 * Y_{j-1} + eta_j * Y_j)``.  Under this model the
density of a dropout's unobserved ``Y_j`` is the observed-data conditional
tilted by ``exp(-eta_j * Y_j)``.  With a linear-Gaussian observed conditional
``N(m, v)`` the tilt is exactly ``N(m - eta_j * v, v)``.
"""

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import FitFailure, InsufficientDataError, InvalidArgumentError, InvalidDataError
from .base import FitResult, SensitivityModel, expit

MIN_ROWS = 10
_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(20)


@dataclass(frozen=True)
class PanelDataset:
    """Outcomes of shape (n, M); NaN marks a missed visit.

    Visit 1 must be observed for everyone and missingness must be monotone.
    """

    outcomes: np.ndarray

    def __post_init__(self):
        y = np.array(self.outcomes, dtype=float)
        if y.ndim != 2 or y.shape[1] < 2:
            raise InvalidDataError(f"panel must be (n, M) with M >= 2, got shape {y.shape}")
        if np.isinf(y).any():
            raise InvalidDataError("panel contains infinite values")
        miss = np.isnan(y)
        first = np.flatnonzero(miss[:, 0])
        if first.size:
            raise InvalidDataError(f"visit 1 must be observed for every subject (row {first[0]})")
        bad = np.flatnonzero((miss[:, :-1] & ~miss[:, 1:]).any(axis=1))
        if bad.size:
            raise InvalidDataError(
                f"non-monotone missingness: subject in row {bad[0]} returns after dropping out")
        y.flags.writeable = False
        object.__setattr__(self, "outcomes", y)

    @property
    def observed(self):
        return ~np.isnan(self.outcomes)

    @property
    def last_visit(self):
        """1-based index of each subject's last observed visit."""
        return self.observed.sum(axis=1)

    @property
    def n_visits(self):
        return self.outcomes.shape[1]

    def __len__(self):
        return len(self.outcomes)


@dataclass(frozen=True)
class VisitSelectionModel:
    beta0: float
    beta1: float
    eta: float

    def prob_observed(self, y_prev, y_cur):
        return expit(self.beta0 + self.beta1 * np.asarray(y_prev) + self.eta * np.asarray(y_cur))


@dataclass
class VisitRegression:
    """Linear-Gaussian conditional of one visit given the full history."""

    coef: np.ndarray
    resid_var: float

    def mean(self, history):
        return self.coef[0] + history @ self.coef[1:]


@dataclass
class Transition:
    visit: int
    """0-based index of the visit this transition predicts."""
    eta: float
    regression: VisitRegression
    selection: VisitSelectionModel = None
    converged: bool = True
    n_iter: int = 0
    steps: list = field(default_factory=list)


@dataclass
class PanelFit:
    transitions: list
    mu_hat: float

    @property
    def converged(self):
        return all(t.converged for t in self.transitions)


def tilted_conditional(obs_mean, obs_var, eta):
    """Exponential tilt of ``N(obs_mean, obs_var)`` by ``exp(-eta * y)``."""
    if np.any(np.asarray(obs_var) <= 0):
        raise InvalidArgumentError("obs_var must be positive")
    return obs_mean - eta * obs_var, obs_var


def lemma1_sides(joint):
    """Both sides of the tilted-conditional identity for a finite joint law.

    ``joint[t, r]`` is ``P(T = t, R = r)`` for ``r`` in ``{0, 1}``.  Returns
    ``(f(T | R=0), f(T | R=1) * Q / E[Q | R=1])`` with ``Q = P(R=0|T)/P(R=1|T)``.
    """
    p = np.asarray(joint, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2:
        raise InvalidArgumentError("joint must have shape (T, 2)")
    if (p < 0).any():
        raise InvalidArgumentError("probabilities must be non-negative")
    p = p / p.sum()
    p_r = p.sum(axis=0)
    if p_r[0] <= 0 or p_r[1] <= 0:
        raise InvalidArgumentError("both R = 0 and R = 1 need positive probability")
    support = p.sum(axis=1) > 0
    if (p[support, 1] <= 0).any():
        raise InvalidArgumentError("P(R=1 | T=t) must be positive on the support of T")
    f0 = p[:, 0] / p_r[0]
    f1 = p[:, 1] / p_r[1]
    q = np.zeros(len(p))
    q[support] = p[support, 0] / p[support, 1]
    return f0, f1 * q / np.sum(q * f1)


def lemma1_discrete_check(joint, atol=1e-12):
    lhs, rhs = lemma1_sides(joint)
    return bool(np.allclose(lhs, rhs, rtol=0.0, atol=atol))


def logistic_offset(X, y, offset, weights=None, tol=1e-6, max_iter=50):
    """Weighted logistic regression with a fixed offset by Newton-Raphson.

    Returns ``(beta, converged, n_iter, steps)`` where ``steps`` holds the
    max-norm of every Newton update.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    offset = np.broadcast_to(np.asarray(offset, dtype=float), y.shape)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    # centre the non-intercept columns for conditioning; undone on return
    centre = np.average(X[:, 1:], axis=0, weights=w)
    Xc = X.copy()
    Xc[:, 1:] -= centre

    def loglik(beta):
        eta_lin = Xc @ beta + offset
        return float(np.sum(w * (y * eta_lin - np.logaddexp(0.0, eta_lin))))

    def unc(beta):
        out = beta.copy()
        out[0] -= beta[1:] @ centre
        return out

    beta = np.zeros(X.shape[1])
    ybar = np.clip(np.average(y, weights=w), 1e-6, 1 - 1e-6)
    beta[0] = np.log(ybar / (1 - ybar)) - np.average(offset, weights=w)
    current = loglik(beta)
    steps = []
    for it in range(1, max_iter + 1):
        p = expit(Xc @ beta + offset)
        grad = Xc.T @ (w * (y - p))
        hess = (Xc * (w * p * (1 - p))[:, None]).T @ Xc
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise FitFailure("singular information matrix in logistic fit",
                             {"beta": unc(beta).tolist(), "iteration": it}) from exc
        # step halving keeps the likelihood non-decreasing
        for _ in range(30):
            trial = loglik(beta + step)
            if trial >= current - 1e-12 * abs(current):
                break
            step = step / 2
        beta = beta + step
        current = trial
        steps.append(float(np.max(np.abs(step))))
        if not np.isfinite(beta).all():
            raise FitFailure("logistic fit diverged", {"iteration": it, "steps": steps})
        if steps[-1] < tol:
            return unc(beta), True, it, steps
    return unc(beta), False, max_iter, steps


def _fit_regression(Y, j):
    rows = ~np.isnan(Y[:, j])
    n = int(rows.sum())
    if n < MIN_ROWS:
        raise InsufficientDataError(f"visit {j + 1} has {n} observed rows, need {MIN_ROWS}")
    X = np.column_stack([np.ones(n), Y[rows, :j]])
    coef, *_ = np.linalg.lstsq(X, Y[rows, j], rcond=None)
    resid = Y[rows, j] - X @ coef
    return VisitRegression(coef=coef, resid_var=float(resid @ resid / (n - X.shape[1])))


def _fit_selection(Y, j, eta, reg, tol=1e-6, max_iter=50):
    """Logistic dropout model for visit ``j`` on the imputation-completed data.

    Each dropout enters as Gauss-Hermite pseudo-rows over its tilted
    conditional, i.e. the completed-data likelihood averaged over imputations.
    """
    at_risk = ~np.isnan(Y[:, j - 1])
    seen = at_risk & ~np.isnan(Y[:, j])
    gone = at_risk & np.isnan(Y[:, j])
    if not gone.any():
        return None, True, 0, []
    prev_seen = Y[seen, j - 1]
    prev_gone = Y[gone, j - 1]
    m, v = tilted_conditional(reg.mean(Y[gone, :j]), reg.resid_var, eta)
    nodes = m[:, None] + np.sqrt(2.0 * v) * _GH_NODES[None, :]
    g = len(_GH_NODES)
    prev = np.concatenate([prev_seen, np.repeat(prev_gone, g)])
    cur = np.concatenate([Y[seen, j], nodes.ravel()])
    resp = np.concatenate([np.ones(seen.sum()), np.zeros(gone.sum() * g)])
    wts = np.concatenate([np.ones(seen.sum()), np.tile(_GH_WEIGHTS / np.sqrt(np.pi), gone.sum())])
    X = np.column_stack([np.ones(len(prev)), prev])
    beta, converged, n_iter, steps = logistic_offset(X, resp, eta * cur, wts, tol, max_iter)
    if not converged:
        raise FitFailure(f"dropout model for visit {j + 1} did not converge (separation?)",
                         {"visit": j + 1, "eta": eta, "beta": beta.tolist(), "steps": steps})
    return VisitSelectionModel(float(beta[0]), float(beta[1]), float(eta)), converged, n_iter, steps


def _as_etas(etas, n_visits):
    etas = np.atleast_1d(np.asarray(etas, dtype=float))
    if len(etas) != n_visits - 1:
        raise InvalidArgumentError(f"need {n_visits - 1} sensitivity parameters, got {len(etas)}")
    return etas


def fit_panel(panel, etas):
    """Per-visit conditional regressions and dropout models, plus ``E[Y_M]``."""
    Y = panel.outcomes
    etas = _as_etas(etas, panel.n_visits)
    transitions = []
    filled = Y.copy()
    for j in range(1, panel.n_visits):
        reg = _fit_regression(Y, j)
        sel, converged, n_iter, steps = _fit_selection(Y, j, etas[j - 1], reg)
        transitions.append(Transition(j, float(etas[j - 1]), reg, sel, converged, n_iter, steps))
        # conditional-mean completion; exact for E[Y_M] because every step is linear
        miss = np.isnan(Y[:, j])
        m, _ = tilted_conditional(reg.mean(filled[miss, :j]), reg.resid_var, etas[j - 1])
        filled[miss, j] = m
    return PanelFit(transitions=transitions, mu_hat=float(filled[:, -1].mean()))


def fit_two_visit(panel, eta):
    """Two-visit special case; returns the :class:`PanelFit` with one transition."""
    if panel.n_visits != 2:
        raise InvalidArgumentError("fit_two_visit needs exactly two visits")
    return fit_panel(panel, [eta])


def sequential_impute(panel, etas, rng, fit=None):
    """Fill every missed visit by draws from its tilted conditional, visit by visit.

    Returns ``(completed, imputed)`` where ``imputed`` flags the filled cells.
    """
    Y = panel.outcomes
    etas = _as_etas(etas, panel.n_visits)
    filled = Y.copy()
    imputed = np.isnan(Y)
    for j in range(1, panel.n_visits):
        reg = fit.transitions[j - 1].regression if fit is not None else _fit_regression(Y, j)
        miss = imputed[:, j]
        m, v = tilted_conditional(reg.mean(filled[miss, :j]), reg.resid_var, etas[j - 1])
        filled[miss, j] = m + np.sqrt(v) * rng.standard_normal(int(miss.sum()))
    return filled, imputed


def simulate_dropout(completed, transitions, rng):
    """Apply the fitted dropout models to complete data; returns a panel with NaNs."""
    sim = np.array(completed, dtype=float)
    alive = np.ones(len(sim), dtype=bool)
    for t in transitions:
        j = t.visit
        if t.selection is not None:
            p = t.selection.prob_observed(sim[:, j - 1], sim[:, j])
            alive &= rng.random(len(sim)) < p
        sim[~alive, j] = np.nan
    return PanelDataset(sim)


def simulate_two_visit_observed(fit, eta, panel, rng):
    """Simulated observed ``(Y1, Y2)`` rows for the two-visit model."""
    completed, _ = sequential_impute(panel, [eta], rng, fit)
    return LongitudinalModel(2).comparison_view(simulate_dropout(completed, fit.transitions, rng))


class LongitudinalModel(SensitivityModel):
    """Dropout model with one sensitivity parameter per post-baseline visit.

    With two visits the single coordinate is ``eta``; otherwise
    ``eta_2, ..., eta_M``.  Fix a coordinate to 0 in the grid to treat that
    visit's dropout as MAR.  Simulated and observed data are compared on the
    rows observed at the final visit.
    """

    def __init__(self, n_visits=2):
        self.n_visits = n_visits

    @property
    def eta_names(self):
        if self.n_visits == 2:
            return ("eta",)
        return tuple(f"eta_{m}" for m in range(2, self.n_visits + 1))

    def validate(self, X):
        panel = X if isinstance(X, PanelDataset) else PanelDataset(X)
        if panel.n_visits != self.n_visits:
            raise InvalidDataError(f"expected {self.n_visits} visits, got {panel.n_visits}")
        return panel

    def fit(self, eta, data, rng=None):
        f = fit_panel(data, eta)
        diagnostics = {}
        for t in f.transitions:
            if t.selection is not None:
                diagnostics[f"beta0_{t.visit + 1}"] = t.selection.beta0
                diagnostics[f"beta1_{t.visit + 1}"] = t.selection.beta1
        return FitResult(estimates={"mu": f.mu_hat}, detail=f, converged=f.converged,
                         diagnostics=diagnostics)

    def simulate_observed(self, fit, eta, data, rng):
        completed, _ = sequential_impute(data, eta, rng, fit.detail)
        return simulate_dropout(completed, fit.detail.transitions, rng)

    def comparison_view(self, data):
        rows = data.observed[:, -1]
        return data.outcomes[rows]
