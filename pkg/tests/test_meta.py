import numpy as np
import pytest
from scipy import integrate, stats

from simsens.exceptions import InvalidDataError, SimulationInfeasible
from simsens.models.meta import (
    CopasModel,
    MetaDataset,
    MetaFit,
    copas_loglik,
    draw_candidates,
    fit_copas,
    fit_random_effects,
    random_effects_loglik,
    selection_probability,
    simulate_selected,
)


def quadrature_loglik(data, mu, tau2, rho, a, b):
    """log f(y) + log P(z > 0 | y) - log P(z > 0), constants restored by the caller."""
    total = 0.0
    for y, s in zip(data.y, data.s):
        tot = tau2 + s * s
        u = a + b / s
        # eps | y is normal; z > 0 given eps has probability Phi((u + rho eps) / sqrt(1 - rho^2))
        m = s * (y - mu) / tot
        sd = np.sqrt(tau2 / tot)
        if sd == 0:
            p_sel = stats.norm.cdf((u + rho * m) / np.sqrt(1 - rho ** 2))
        else:
            p_sel = integrate.quad(
                lambda e: stats.norm.pdf(e, m, sd) * stats.norm.cdf((u + rho * e) / np.sqrt(1 - rho ** 2)),
                m - 12 * sd, m + 12 * sd, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        total += (stats.norm.logpdf(y, mu, np.sqrt(tot)) + np.log(p_sel)
                  - stats.norm.logcdf(u))
    return total + 0.5 * len(data) * np.log(2 * np.pi)


def synthetic(n, mu=0.3, tau2=0.02, rho=0.7, a=-0.5, b=0.3, seed=0):
    g = np.random.default_rng(seed)
    pool = g.uniform(0.08, 0.6, 400)
    return simulate_selected(MetaFit(mu, tau2, rho, 0.0, True), a, b, pool, n, g)


class TestDataset:
    def test_zero_s_names_row(self):
        with pytest.raises(InvalidDataError, match="row 1"):
            MetaDataset([0.1, 0.2, 0.3], [0.1, 0.0, 0.2])

    def test_non_finite(self):
        with pytest.raises(InvalidDataError):
            MetaDataset([0.1, np.inf], [0.1, 0.2])

    def test_too_small(self):
        with pytest.raises(InvalidDataError):
            MetaDataset([0.1], [0.1])


class TestLoglik:
    def test_quadrature_oracle(self, rng):
        for _ in range(10):
            data = MetaDataset(rng.normal(0.2, 0.3, 6), rng.uniform(0.05, 0.5, 6))
            mu, tau2 = rng.normal(0.1, 0.2), rng.uniform(0.0, 0.1)
            rho, a, b = rng.uniform(-0.95, 0.95), rng.uniform(-3, 1), rng.uniform(0, 2)
            assert copas_loglik(data, mu, tau2, rho, a, b) == pytest.approx(
                quadrature_loglik(data, mu, tau2, rho, a, b), abs=1e-6)

    def test_rho_zero_is_random_effects(self, rng):
        data = MetaDataset(rng.normal(size=8), rng.uniform(0.1, 1, 8))
        assert copas_loglik(data, 0.1, 0.05, 0.0, -1.0, 0.4) == pytest.approx(
            random_effects_loglik(data, 0.1, 0.05), abs=1e-8)

    def test_large_a_is_random_effects(self, rng):
        data = MetaDataset(rng.normal(size=8), rng.uniform(0.1, 1, 8))
        assert copas_loglik(data, 0.1, 0.05, 0.8, 40.0, 0.4) == pytest.approx(
            random_effects_loglik(data, 0.1, 0.05), abs=1e-8)

    def test_finite_in_far_tails(self):
        data = MetaDataset([5.0, -5.0], [0.01, 0.02])
        for rho in (-0.999999, 0.999999):
            assert np.isfinite(copas_loglik(data, 0.0, 0.0, rho, -30.0, 0.1))

    def test_study_order_invariance(self, rng):
        y, s = rng.normal(size=9), rng.uniform(0.1, 1, 9)
        perm = rng.permutation(9)
        assert copas_loglik(MetaDataset(y, s), 0.1, 0.02, 0.5, -1, 0.5) == pytest.approx(
            copas_loglik(MetaDataset(y[perm], s[perm]), 0.1, 0.02, 0.5, -1, 0.5), abs=1e-12)

    def test_domain(self, rng):
        data = MetaDataset([0.1, 0.2], [0.1, 0.1])
        with pytest.raises(ValueError):
            copas_loglik(data, 0.0, -1.0, 0.0, 0, 0)
        with pytest.raises(ValueError):
            copas_loglik(data, 0.0, 0.1, 1.0, 0, 0)


class TestFit:
    def test_selection_off_matches_random_effects(self):
        data = synthetic(30, seed=4)
        f = fit_copas(data, 20.0, 0.0)
        mu_re, tau2_re = fit_random_effects(data)
        assert f.mu == pytest.approx(mu_re, abs=1e-5)

    def test_location_equivariance_without_selection(self):
        data = synthetic(30, seed=5)
        shifted = MetaDataset(data.y + 1.5, data.s)
        assert fit_copas(shifted, 20.0, 0.0).mu - fit_copas(data, 20.0, 0.0).mu == \
            pytest.approx(1.5, abs=1e-6)

    def test_recovers_truth(self):
        data = synthetic(500, seed=6)
        f = fit_copas(data, -0.5, 0.3)
        assert f.converged

        def ll(p):
            return copas_loglik(data, p[0], np.exp(p[1]), np.tanh(p[2]), -0.5, 0.3)

        # standard error of mu-hat from the numerical observed information
        x = np.array([f.mu, np.log(f.tau2), np.arctanh(f.rho)])
        h = 1e-4
        hess = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                ei, ej = np.eye(3)[i] * h, np.eye(3)[j] * h
                hess[i, j] = (ll(x + ei + ej) - ll(x + ei - ej) - ll(x - ei + ej)
                              + ll(x - ei - ej)) / (4 * h * h)
        se = np.sqrt(np.linalg.inv(-hess)[0, 0])
        assert abs(f.mu - 0.3) < 3 * se

    def test_gradient_zero_at_optimum(self):
        data = synthetic(60, seed=7)
        f = fit_copas(data, -0.5, 0.3)
        assert f.tau2 > 0 and abs(f.rho) < 0.999

        def ll(p):
            return copas_loglik(data, p[0], np.exp(p[1]), np.tanh(p[2]), -0.5, 0.3)

        x = np.array([f.mu, np.log(f.tau2), np.arctanh(f.rho)])
        h = 1e-5
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            assert abs((ll(x + e) - ll(x - e)) / (2 * h)) < 1e-4

    def test_fit_not_worse_than_starts(self):
        data = synthetic(40, seed=8)
        f = fit_copas(data, -1.0, 0.5)
        assert f.loglik >= copas_loglik(data, *fit_random_effects(data), 0.0, -1.0, 0.5) - 1e-9


class TestSimulate:
    def test_no_selection_keeps_all(self, rng):
        pool = rng.uniform(0.1, 0.5, 7)
        y, s, keep = draw_candidates(MetaFit(0, 0.01, 0.5, 0, True), 20.0, 0.0, pool, 500, rng)
        assert keep.all()
        assert set(s) <= set(pool)

    def test_half_kept(self, rng):
        pool = rng.uniform(0.1, 0.5, 7)
        _, _, keep = draw_candidates(MetaFit(0, 0.01, 0.0, 0, True), 0.0, 0.0, pool, 10_000, rng)
        assert keep.mean() == pytest.approx(0.5, abs=0.03)

    def test_kept_fraction_matches_phi(self, rng):
        pool = rng.uniform(0.1, 0.5, 20)
        _, _, keep = draw_candidates(MetaFit(0, 0.01, 0.6, 0, True), -1.0, 0.3, pool, 20_000, rng)
        p = selection_probability(pool, -1.0, 0.3).mean()
        assert abs(keep.mean() - p) < 3 * np.sqrt(p * (1 - p) / 20_000)

    def test_positive_rho_inflates_kept_mean(self, rng):
        pool = rng.uniform(0.1, 0.5, 20)
        y, _, keep = draw_candidates(MetaFit(0, 0.01, 0.8, 0, True), -1.0, 0.3, pool, 20_000, rng)
        assert y[keep].mean() > 0.0

    def test_exact_target(self, rng):
        out = simulate_selected(MetaFit(0, 0.01, 0.6, 0, True), -1.0, 0.3, [0.2, 0.3], 17, rng)
        assert len(out) == 17

    def test_infeasible_corner(self, rng):
        with pytest.raises(SimulationInfeasible):
            simulate_selected(MetaFit(0, 0.01, 0.6, 0, True), -8.0, 0.01, [0.2, 0.3], 10, rng)


class TestModel:
    def test_view_and_validate(self):
        m = CopasModel()
        data = m.validate(np.array([[0.1, 0.5], [0.2, 0.25]]))
        np.testing.assert_allclose(m.comparison_view(data), [[0.1, 2.0], [0.2, 4.0]])
        with pytest.raises(InvalidDataError):
            m.validate(np.zeros((3, 3)))
