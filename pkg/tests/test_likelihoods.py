import numpy as np
import pytest
from scipy import integrate, stats

from svbvar.data import VARData, build_var_data, impact_matrix, loadings_matrix
from svbvar.likelihoods import (
    csv_integrated_likelihood,
    fsv_conditional_loglik,
    fsv_covariances,
    fsv_integrated_likelihood,
    homoskedastic_var_log_ml,
    log_ph_given_phi,
    sv_integrated_likelihood,
    sv_prior_variances,
)
from svbvar.priors import ConjugatePrior, EquationPrior


def toy_data(seed, T=8, n=2, p=1):
    rng = np.random.default_rng(seed)
    return build_var_data(rng.standard_normal((T + p, n)), p), rng


def dense_marginal(data: VARData, V: np.ndarray, covs: np.ndarray) -> float:
    """log N(vec Y; 0, Xt V Xt' + blockdiag(covs)) with y ordered (t, i) and alpha equation-major."""
    T, n, k = data.T, data.n, data.k
    Xt = np.zeros((T * n, n * k))
    for t in range(T):
        for i in range(n):
            Xt[t * n + i, i * k : (i + 1) * k] = data.X[t]
    S = Xt @ np.diag(V) @ Xt.T
    for t in range(T):
        S[t * n : (t + 1) * n, t * n : (t + 1) * n] += covs[t]
    return float(stats.multivariate_normal(np.zeros(T * n), S).logpdf(data.Y.reshape(-1)))


class TestEquationModels:
    def test_sv_matches_dense_gaussian(self):
        data, rng = toy_data(1, T=7, n=3)
        prior = EquationPrior(np.array([1.0, 2.0, 0.5]), 1)
        beta = [np.empty(0), rng.standard_normal(1), rng.standard_normal(2)]
        B0 = impact_matrix(beta, 3)
        h = rng.normal(0, 0.5, (3, data.T))
        Binv = np.linalg.inv(B0)
        covs = np.array([Binv @ np.diag(np.exp(h[:, t])) @ Binv.T for t in range(data.T)])
        V = sv_prior_variances(prior, 0.3, 0.05)
        expected = dense_marginal(data, V, covs)
        assert sv_integrated_likelihood(data, beta, h, (0.3, 0.05), prior) == pytest.approx(expected, rel=1e-10)
        assert sv_integrated_likelihood(data, B0, h, (0.3, 0.05), prior) == pytest.approx(expected, rel=1e-10)

    def test_fsv_matches_dense_gaussian(self):
        data, rng = toy_data(2, T=6, n=3)
        prior = EquationPrior(np.array([1.0, 2.0, 0.5]), 1)
        l = [np.empty(0), rng.standard_normal(1), rng.standard_normal(1)]
        L = loadings_matrix(l, 3, 1)
        h = rng.normal(0, 0.5, (4, data.T))
        covs = fsv_covariances(L, h)
        V = sv_prior_variances(prior, 0.2, 0.02)
        expected = dense_marginal(data, V, covs)
        assert fsv_integrated_likelihood(data, L, h, (0.2, 0.02), prior) == pytest.approx(expected, rel=1e-10)

    def test_fsv_covariance_blocks(self):
        L = np.array([[1.0], [0.5], [-0.3]])
        h = np.array([[0.1, 0.2], [0.0, -0.1], [0.3, 0.0], [0.5, -0.5]])
        S = fsv_covariances(L, h)
        for t in range(2):
            np.testing.assert_allclose(S[t], np.diag(np.exp(h[:3, t])) + np.exp(h[3, t]) * L @ L.T)

    def test_fsv_conditional_loglik_matches_scipy(self):
        data, rng = toy_data(4, T=5, n=3)
        alpha = rng.standard_normal((3, data.k)) * 0.1
        L = loadings_matrix([np.empty(0), np.array([0.4]), np.array([0.2])], 3, 1)
        h = rng.normal(0, 0.3, (4, data.T))
        S = fsv_covariances(L, h)
        E = data.Y - data.X @ alpha.T
        expected = sum(stats.multivariate_normal(np.zeros(3), S[t]).logpdf(E[t]) for t in range(data.T))
        assert fsv_conditional_loglik(data, alpha, L, h) == pytest.approx(expected, rel=1e-10)


class TestCommonVolatility:
    @pytest.mark.parametrize("seed", range(5))
    def test_zero_volatility_equals_matrix_t_evidence(self, seed):
        data, _ = toy_data(seed, T=15, n=3, p=2)
        prior = ConjugatePrior.default(np.array([0.5, 1.0, 2.0]), 2)
        a = csv_integrated_likelihood(data, np.zeros(data.T), 0.04, prior)
        b = homoskedastic_var_log_ml(data, prior, 0.04)
        assert a == pytest.approx(b, rel=1e-10)

    def test_constant_volatility_rescales_wishart_scale(self):
        # a constant path h = c is the homoskedastic model with S0 scaled by e^c
        # and the coefficient prior variances scaled by e^-c
        data, _ = toy_data(9, T=10, n=2)
        prior = ConjugatePrior.default(np.array([1.0, 0.4]), 1)
        c = 0.7
        scaled = ConjugatePrior.default(
            np.array([1.0, 0.4]), 1, S0=prior.S0 * np.exp(c), intercept_var=100.0 * np.exp(-c)
        )
        lhs = csv_integrated_likelihood(data, np.full(data.T, c), 0.04, prior)
        rhs = homoskedastic_var_log_ml(data, scaled, 0.04 * np.exp(-c))
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_wrong_length(self):
        data, _ = toy_data(0)
        with pytest.raises(ValueError):
            csv_integrated_likelihood(data, np.zeros(data.T + 1), 0.04, ConjugatePrior.default(np.ones(2), 1))


def test_volatility_prior_integrates_sigma2_out():
    rng = np.random.default_rng(5)
    h = rng.normal(0, 0.4, 6)
    mu, phi, nu, S = 0.1, 0.8, 5.0, 0.4

    def integrand(s2):
        d = h - mu
        ss = (1 - phi**2) * d[0] ** 2 + np.sum((d[1:] - phi * d[:-1]) ** 2)
        dens = (2 * np.pi * s2) ** (-h.size / 2) * np.sqrt(1 - phi**2) * np.exp(-0.5 * ss / s2)
        return dens * stats.invgamma(nu, scale=S).pdf(s2)

    val, _ = integrate.quad(integrand, 0, np.inf, limit=200)
    assert log_ph_given_phi(h, mu, phi, nu, S) == pytest.approx(np.log(val), rel=1e-8)
