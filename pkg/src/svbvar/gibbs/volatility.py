"""Conditional draws for AR(1) log-volatility processes."""

from __future__ import annotations

import numpy as np

from ..priors import VolatilityPrior
from ..stochastics import BandedPrecision, draw_gaussian_precision, draw_truncated_normal

__all__ = [
    "KSC_PROBS",
    "KSC_MEANS",
    "KSC_VARS",
    "LOG_SQUARE_OFFSET",
    "ar1_sum_of_squares",
    "sample_ar1_phi",
    "sample_ar1_mu",
    "sample_ar1_sigma2",
    "ksc_sample_logvol",
    "ar1_log_initial_factor",
]

# seven-component normal mixture for log chi-square(1); means already shifted
KSC_PROBS = np.array([0.00730, 0.10556, 0.00002, 0.04395, 0.34001, 0.24566, 0.25750])
KSC_MEANS = np.array([-10.12999, -3.97281, -8.56686, 2.77786, 0.61942, 1.79518, -1.08819]) - 1.2704
KSC_VARS = np.array([5.79596, 2.61369, 5.17950, 0.16735, 0.64009, 0.34023, 1.26261])
LOG_SQUARE_OFFSET = 1e-4


def ar1_sum_of_squares(h: np.ndarray, mu: float, phi: float) -> float:
    """(1 - phi^2)(h_1 - mu)^2 + sum_t (h_t - mu - phi (h_{t-1} - mu))^2."""
    d = np.asarray(h, dtype=float) - mu
    e = d[1:] - phi * d[:-1]
    return float((1.0 - phi * phi) * d[0] ** 2 + e @ e)


def ar1_log_initial_factor(phi: float, h1: float, mu: float, sigma2: float) -> float:
    """Log of sqrt(1 - phi^2) exp(-(1 - phi^2)(h_1 - mu)^2 / (2 sigma2))."""
    w = 1.0 - phi * phi
    return 0.5 * np.log(w) - 0.5 * w * (h1 - mu) ** 2 / sigma2


def sample_ar1_phi(
    rng: np.random.Generator,
    h: np.ndarray,
    mu: float,
    sigma2: float,
    phi: float,
    prior: VolatilityPrior,
) -> tuple[float, bool]:
    """Independence Metropolis-Hastings update of the AR coefficient.

    Returns the new value and whether the proposal was accepted.
    """
    if not abs(phi) < 1:
        raise ValueError(f"current phi must satisfy |phi| < 1, got {phi}")
    d = np.asarray(h, dtype=float) - mu
    lagged, lead = d[:-1], d[1:]
    K = 1.0 / prior.V_phi + (lagged @ lagged) / sigma2
    phi_hat = (prior.phi0 / prior.V_phi + (lagged @ lead) / sigma2) / K
    prop = draw_truncated_normal(rng, phi_hat, 1.0 / K, -1.0, 1.0)
    log_ratio = ar1_log_initial_factor(prop, d[0], 0.0, sigma2) - ar1_log_initial_factor(phi, d[0], 0.0, sigma2)
    if log_ratio >= 0 or np.log(rng.random()) < log_ratio:
        return prop, True
    return phi, False


def sample_ar1_mu(
    rng: np.random.Generator, h: np.ndarray, phi: float, sigma2: float, prior: VolatilityPrior
) -> float:
    h = np.asarray(h, dtype=float)
    T = h.size
    K = 1.0 / prior.V_mu + (1.0 - phi * phi + (T - 1) * (1.0 - phi) ** 2) / sigma2
    s = (1.0 - phi * phi) * h[0] + (1.0 - phi) * np.sum(h[1:] - phi * h[:-1])
    mean = (prior.mu0 / prior.V_mu + s / sigma2) / K
    return float(mean + rng.standard_normal() / np.sqrt(K))


def sample_ar1_sigma2(
    rng: np.random.Generator, h: np.ndarray, mu: float, phi: float, prior: VolatilityPrior
) -> float:
    if not abs(phi) < 1:
        raise ValueError(f"|phi| must be < 1, got {phi}")
    h = np.asarray(h, dtype=float)
    S_post = prior.S + 0.5 * ar1_sum_of_squares(h, mu, phi)
    return float(S_post / rng.gamma(prior.nu + h.size / 2.0))


def ksc_sample_logvol(
    rng: np.random.Generator,
    eps: np.ndarray,
    h: np.ndarray,
    mu: float,
    phi: float,
    sigma2: float,
    *,
    offset: float = LOG_SQUARE_OFFSET,
) -> np.ndarray:
    """Auxiliary-mixture draw of a log-volatility path.

    ``eps`` is the series whose variance is exp(h); ``h`` is the current path,
    used to draw the mixture indicators.
    """
    eps = np.asarray(eps, dtype=float)
    h = np.asarray(h, dtype=float)
    T = eps.size
    ystar = np.log(eps * eps + offset)
    # indicator probabilities, computed in log space per period
    dev = ystar[:, None] - h[:, None] - KSC_MEANS[None, :]
    logw = np.log(KSC_PROBS) - 0.5 * np.log(KSC_VARS) - 0.5 * dev * dev / KSC_VARS
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    cdf = np.cumsum(w, axis=1)
    u = rng.random(T) * cdf[:, -1]
    s = np.minimum((cdf < u[:, None]).sum(axis=1), KSC_PROBS.size - 1)

    prior_K = BandedPrecision.ar1(phi, sigma2, T)
    K = prior_K.add_diagonal(1.0 / KSC_VARS[s])
    c = prior_K.matvec(np.full(T, mu)) + (ystar - KSC_MEANS[s]) / KSC_VARS[s]
    return draw_gaussian_precision(rng, c, K)
