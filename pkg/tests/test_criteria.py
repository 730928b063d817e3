import warnings

import numpy as np
import pytest
from scipy import integrate, stats

from svbvar.crossentropy import Ar1GaussianFamily, build_is_family, fit_mvnormal
from svbvar.data import build_var_data
from svbvar.gibbs import RunConfig, run_chain
from svbvar.criteria import (
    DicResult,
    TruncatedGaussianTuning,
    ar1_prior_logpdf,
    build_truncated_gaussian,
    chain_parameters,
    compute_dic,
    fsv_observed_loglik,
    gd_log_ml,
    model_dic,
    model_gd_log_ml,
    observed_loglik,
)
from svbvar.marginal import importance_log_ml, is_log_ml
from svbvar.priors import ConjugatePrior

from toys import RegressionToy


# ---------------------------------------------------------------------------
# truncated Gaussian tuning density


def test_one_dimensional_region_is_196_sd():
    tg = TruncatedGaussianTuning(np.array([1.0]), np.array([[4.0]]), 0.05)
    edge = 2.0 * 1.959963984540054
    assert tg.inside(np.array([1.0 + edge - 1e-9]))[0]
    assert not tg.inside(np.array([1.0 + edge + 1e-9]))[0]
    mass, _ = integrate.quad(lambda x: np.exp(tg.logpdf(np.array([x]))[0]), 1 - edge, 1 + edge)
    assert mass == pytest.approx(1.0, abs=1e-9)


def test_membership_matches_dense_mahalanobis():
    rng = np.random.default_rng(0)
    draws = rng.multivariate_normal([0, 1, -1], [[2, 0.5, 0], [0.5, 1, 0.3], [0, 0.3, 0.5]], 500)
    tg = build_truncated_gaussian(draws, 0.1)
    x = rng.normal(0, 2, (1000, 3))
    S = np.cov(draws.T)
    d = x - draws.mean(axis=0)
    q = np.einsum("ij,jk,ik->i", d, np.linalg.inv(S), d)
    np.testing.assert_array_equal(tg.inside(x), q < stats.chi2.ppf(0.9, 3))
    np.testing.assert_allclose(tg.mahalanobis(x), q, rtol=1e-10)
    assert np.all(np.isneginf(tg.logpdf(x[~tg.inside(x)])))


def test_truncated_density_has_unit_mass_in_two_dimensions():
    tg = TruncatedGaussianTuning(np.zeros(2), np.array([[1.0, 0.3], [0.3, 0.5]]), 0.2)
    rng = np.random.default_rng(1)
    box = rng.uniform(-4, 4, (400_000, 2))
    mass = 64.0 * np.mean(np.exp(tg.logpdf(box)))
    assert mass == pytest.approx(1.0, abs=0.02)


def test_tuning_errors():
    with pytest.raises(np.linalg.LinAlgError, match="smaller blocks"):
        TruncatedGaussianTuning(np.zeros(2), np.ones((2, 2)))
    with pytest.raises(ValueError):
        build_truncated_gaussian(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        TruncatedGaussianTuning(np.zeros(1), np.eye(1), alpha=1.0)


# ---------------------------------------------------------------------------
# GD and IS on the closed-form toy


def test_gd_recovers_closed_form_evidence():
    toy = RegressionToy(seed=3)
    draws = toy.posterior_draws(np.random.default_rng(0), 50_000)
    tg = build_truncated_gaussian(draws)
    est = gd_log_ml(draws, tg.logpdf, toy.log_kernel)
    assert abs(est.log_ml - toy.log_evidence()) < 0.05
    assert est.method == "gd"


def test_exact_tuning_leaves_only_region_share_variance():
    # with a known variance the posterior is exactly Gaussian; f equal to it truncated gives constant ratios
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(20), rng.standard_normal(20)])
    y = X @ np.array([0.3, -0.5]) + rng.standard_normal(20)
    V0 = 2.0 * np.eye(2)
    cov = np.linalg.inv(np.linalg.inv(V0) + X.T @ X)
    mean = cov @ X.T @ y
    truth = stats.multivariate_normal(np.zeros(20), np.eye(20) + X @ V0 @ X.T).logpdf(y)

    def log_kernel(b):
        return stats.norm.logpdf(y, X @ b, 1).sum() + stats.multivariate_normal(np.zeros(2), V0).logpdf(b)

    draws = rng.multivariate_normal(mean, cov, 2000)
    tg = TruncatedGaussianTuning(mean, cov)
    est = gd_log_ml(draws, tg.logpdf, log_kernel)
    # every in-region ratio equals 1 / ((1 - alpha) p(y)); only the in-region share varies
    share = tg.inside(draws).mean()
    assert est.log_ml == pytest.approx(truth + np.log(1 - tg.alpha) - np.log(share), abs=1e-9)
    assert est.nse == pytest.approx(np.sqrt(share * (1 - share) / len(draws)) / share, rel=1e-8)


def test_gd_prior_split_and_batches():
    toy = RegressionToy(seed=4)
    draws = toy.posterior_draws(np.random.default_rng(1), 4000)
    tg = build_truncated_gaussian(draws)
    joint = gd_log_ml(draws, tg.logpdf, toy.log_kernel)
    split = gd_log_ml(draws, tg.logpdf, lambda p: toy.log_kernel(p) - 1.5, lambda p: 1.5, batches=20)
    assert split.log_ml == pytest.approx(joint.log_ml, rel=1e-12)
    assert split.nse > 0
    far = build_truncated_gaussian(draws + 100.0)
    with pytest.raises(ValueError, match="support"):
        gd_log_ml(draws, far.logpdf, toy.log_kernel)


def test_is_and_gd_agree_on_toy():
    toy = RegressionToy(seed=5)
    rng = np.random.default_rng(3)
    draws = toy.posterior_draws(rng, 5000)
    fam = fit_mvnormal(draws)
    is_est, _ = importance_log_ml(toy.log_kernel, fam, 5000, rng)
    gd_est = gd_log_ml(draws, build_truncated_gaussian(draws).logpdf, toy.log_kernel)
    assert abs(is_est.log_ml - gd_est.log_ml) < 3 * np.hypot(is_est.nse, gd_est.nse)


def test_model_gd_variants_agree_with_importance_sampling():
    rng = np.random.default_rng(4)
    y = rng.standard_normal((11, 2)) * np.exp(np.linspace(-0.4, 0.4, 11))[:, None]
    data = build_var_data(y, 1)
    prior = ConjugatePrior.default(np.ones(2), 1, kappa_fixed=0.2)
    chain = run_chain("csv", data, prior, RunConfig("csv", burn_in=500, keep=6000, p=1, seed=7))
    fam = build_is_family("csv", chain)
    ref = is_log_ml("csv", data, prior, fam, 6000, rng)
    for variant in ("gd1", "gd2"):
        est = model_gd_log_ml("csv", data, prior, chain, variant=variant, h_family=fam if variant == "gd2" else None)
        assert est.method == variant
        assert abs(est.log_ml - ref.log_ml) < 4 * np.hypot(est.nse, ref.nse) + 0.05
    with pytest.raises(ValueError):
        model_gd_log_ml("csv", data, prior, chain, variant="gd3")


# ---------------------------------------------------------------------------
# observed-data likelihood


def _prior_as_family(mu, phi, s2, T):
    a = np.full(T, mu * (1 - phi))
    a[0] = mu
    b = np.full(T, s2)
    b[0] = s2 / (1 - phi**2)
    return Ar1GaussianFamily(phi, a, b)


def test_ar1_prior_density_matches_dense():
    h = np.random.default_rng(5).normal(0, 1, (3, 6))
    i = np.arange(6)
    cov = 0.2 / (1 - 0.5**2) * 0.5 ** np.abs(i[:, None] - i[None, :])
    expected = stats.multivariate_normal(np.full(6, 0.3), cov).logpdf(h)
    np.testing.assert_allclose(ar1_prior_logpdf(h, 0.3, 0.5, 0.2), expected, rtol=1e-12)
    np.testing.assert_allclose(_prior_as_family(0.3, 0.5, 0.2, 6).logpdf(h), expected, rtol=1e-12)


def test_factor_likelihood_with_degenerate_volatility_is_plug_in_gaussian():
    rng = np.random.default_rng(6)
    data = build_var_data(rng.standard_normal((9, 2)), 1)
    alpha = rng.normal(0, 0.2, (2, 3))
    mu, phi, s2 = np.array([-0.3, 0.4]), np.array([0.5, 0.7]), np.array([1e-12, 1e-12])
    fam = {f"h{j}": _prior_as_family(mu[j], phi[j], s2[j], data.T) for j in range(2)}
    est = fsv_observed_loglik(data, alpha, np.zeros((2, 0)), mu, phi, s2, fam, 50, rng)
    E = data.Y - data.X @ alpha.T
    expected = stats.norm.logpdf(E, 0, np.exp(mu / 2)).sum()
    assert est.value == pytest.approx(expected, abs=1e-6)
    assert est.nse < 1e-5


def _grid_loglik(e, mu, phi, s2, grid):
    dx = grid[1] - grid[0]
    trans = stats.norm.pdf(grid[None, :], mu + phi * (grid[:, None] - mu), np.sqrt(s2)) * dx
    a = stats.norm.pdf(grid, mu, np.sqrt(s2 / (1 - phi**2))) * dx
    total = 0.0
    for t in range(e.size):
        if t:
            a = a @ trans
        a = a * stats.norm.pdf(e[t], 0, np.exp(grid / 2))
        c = a.sum()
        total += np.log(c)
        a = a / c
    return total


def test_factor_likelihood_matches_grid_quadrature():
    rng = np.random.default_rng(7)
    data = build_var_data(rng.standard_normal((5, 2)) * 1.3, 1)
    alpha = np.zeros((2, 3))
    mu, phi, s2 = np.array([0.2, -0.4]), np.array([0.8, 0.6]), np.array([0.3, 0.5])
    fam = {f"h{j}": _prior_as_family(mu[j], phi[j], s2[j], data.T) for j in range(2)}
    est = fsv_observed_loglik(data, alpha, [np.empty(0), np.empty(0)], mu, phi, s2, fam, 20_000, rng)
    grid = np.linspace(-9, 9, 3001)
    expected = sum(_grid_loglik(data.Y[:, j], mu[j], phi[j], s2[j], grid) for j in range(2))
    assert abs(est.value - expected) < 3 * est.nse


class _FixedBank:
    def __init__(self, bank, inner):
        self.bank, self.inner = bank, inner

    def sample(self, rng, size):
        return self.bank[rng.permutation(size)]

    def logpdf(self, h):
        return self.inner.logpdf(h)


def test_observed_likelihood_ignores_draw_order():
    rng = np.random.default_rng(8)
    data = build_var_data(rng.standard_normal((8, 2)), 1)
    inner = _prior_as_family(0.0, 0.8, 0.2, data.T)
    fam = {"h": _FixedBank(inner.sample(rng, 300), inner)}
    params = {"A": np.zeros((3, 2)), "Sigma": np.eye(2), "phi": 0.8, "sigma2": 0.2}
    a = observed_loglik("csv", data, params, fam, 300, np.random.default_rng(1))
    b = observed_loglik("csv", data, params, fam, 300, np.random.default_rng(2))
    assert a.value == pytest.approx(b.value, rel=1e-12)


def test_common_volatility_likelihood_matches_grid():
    rng = np.random.default_rng(9)
    data = build_var_data(rng.standard_normal((6, 1)), 1)
    params = {"A": np.zeros((2, 1)), "Sigma": np.array([[0.7]]), "phi": 0.7, "sigma2": 0.4}
    est = observed_loglik("csv", data, params, _prior_as_family(0.0, 0.7, 0.4, data.T), 20_000, rng)
    expected = _grid_loglik(data.Y[:, 0] / np.sqrt(0.7), 0.0, 0.7, 0.4, np.linspace(-9, 9, 3001)) - 0.5 * data.T * np.log(0.7)
    assert abs(est.value - expected) < 3 * est.nse


def test_degenerate_weights_warn():
    rng = np.random.default_rng(10)
    data = build_var_data(rng.standard_normal((30, 1)) * 5, 1)
    params = {"A": np.zeros((2, 1)), "Sigma": np.array([[1.0]]), "phi": 0.5, "sigma2": 0.01}
    narrow = _prior_as_family(-3.0, 0.5, 1e-4, data.T)
    with pytest.warns(RuntimeWarning, match="ESS"):
        out = observed_loglik("csv", data, params, narrow, 200, rng)
    assert "low_ess" in out.flags


# ---------------------------------------------------------------------------
# DIC


def test_dic_identities_and_calibration():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((60, 8))
    y = X @ rng.normal(0, 1, 8) + rng.standard_normal(60)
    cov = np.linalg.inv(X.T @ X + 1e-6 * np.eye(8))
    draws = rng.multivariate_normal(cov @ X.T @ y, cov, 5000)

    def loglik(b):
        return stats.norm.logpdf(y, X @ b, 1.0).sum()

    res = compute_dic(list(draws), loglik)
    assert res.dic == res.mean_deviance + res.pd
    assert res.pd == res.mean_deviance - res.deviance_at_point
    assert abs(res.pd - 8) < 0.8


def test_dic_dogmatic_prior_has_no_effective_parameters():
    draws = [np.array([0.5, -0.2])] * 200
    res = compute_dic(draws, lambda b: -np.sum((b - 1.0) ** 2))
    assert abs(res.pd) < 1e-12


def test_dic_failure_accounting():
    draws = [np.array([float(i)]) for i in range(200)]

    def flaky(b):
        if b[0] < 3:
            raise FloatingPointError("boom")
        return -b[0]

    with pytest.raises(RuntimeError, match="3 of 200"):
        compute_dic(draws, flaky)
    assert compute_dic(draws, lambda b: np.nan if b[0] == 7 else -b[0]).failures == 1
    with pytest.raises(ValueError, match="at least 100"):
        compute_dic(draws[:50], lambda b: -b[0])
    assert DicResult.from_parts(10.0, 7.0).to_dict()["pd"] == 3.0


def test_model_dic_on_short_chain():
    rng = np.random.default_rng(12)
    data = build_var_data(rng.standard_normal((21, 2)), 1)
    prior = ConjugatePrior.default(np.ones(2), 1, kappa_fixed=0.2)
    chain = run_chain("csv", data, prior, RunConfig("csv", burn_in=100, keep=150, p=1, seed=2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = model_dic("csv", data, chain, 200, rng)
    assert np.isfinite(res.dic) and res.pd > 0
    assert set(chain_parameters("csv", chain)[0]) == {"A", "Sigma", "phi", "sigma2"}
