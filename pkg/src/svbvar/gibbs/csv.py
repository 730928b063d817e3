"""Gibbs steps for the VAR with a common stochastic-volatility factor."""

from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from ..data import VARData
from ..likelihoods import conjugate_posterior
from ..priors import ConjugatePrior, kappa_gig_params
from ..stochastics import BandedPrecision, draw_gig, draw_inverse_wishart

__all__ = [
    "csv_sample_A_Sigma",
    "csv_sample_h",
    "csv_sample_kappa",
    "csv_log_h_kernel",
    "csv_h_mode",
    "var_posterior_draws",
]


def csv_sample_A_Sigma(
    rng: np.random.Generator,
    data: VARData,
    h: np.ndarray | None,
    kappa: float,
    prior: ConjugatePrior,
) -> tuple[np.ndarray, np.ndarray]:
    """Joint normal-inverse-Wishart draw of (A, Sigma) given h and kappa."""
    post = conjugate_posterior(data, h, kappa, prior)
    Sigma = draw_inverse_wishart(rng, post.nu, post.S_hat)
    Z = rng.standard_normal(post.A_hat.shape)
    # vec(A) ~ N(vec(A_hat), Sigma kron K^{-1})
    U = linalg.solve_triangular(post.K_chol, Z, lower=True, trans="T")
    A = post.A_hat + U @ np.linalg.cholesky(Sigma).T
    return A, Sigma


def _quad_forms(data: VARData, A: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
    E = data.Y - data.X @ A
    Lc = np.linalg.cholesky(Sigma)
    Z = linalg.solve_triangular(Lc, E.T, lower=True)
    return np.sum(Z * Z, axis=0)


def csv_log_h_kernel(h: np.ndarray, s: np.ndarray, n: int, prior_K: BandedPrecision) -> float:
    """Unnormalised log conditional density of h given (A, Sigma, phi, sigma2)."""
    return float(-0.5 * n * h.sum() - 0.5 * np.sum(np.exp(-h) * s) - 0.5 * h @ prior_K.matvec(h))


def _newton_mode(h0: np.ndarray, s: np.ndarray, n: int, prior_K: BandedPrecision, *, tol: float = 1e-5, max_iter: int = 100):
    h = h0.copy()
    f = csv_log_h_kernel(h, s, n, prior_K)
    for _ in range(max_iter):
        es = np.exp(-h) * s
        grad = -0.5 * n + 0.5 * es - prior_K.matvec(h)
        Kh = prior_K.add_diagonal(0.5 * es)
        if np.max(np.abs(grad)) < tol:
            return h, Kh
        step = linalg.cho_solve_banded((Kh.cholesky(), True), grad)
        t = 1.0
        while True:
            cand = h + t * step
            fc = csv_log_h_kernel(cand, s, n, prior_K)
            if fc >= f - 1e-10 * abs(f) or t < 1e-8:
                break
            t *= 0.5
        if t < 1e-8:
            break
        h, f = cand, fc
    es = np.exp(-h) * s
    grad = -0.5 * n + 0.5 * es - prior_K.matvec(h)
    if np.max(np.abs(grad)) < 1e-3:
        return h, prior_K.add_diagonal(0.5 * es)
    raise FloatingPointError(f"Newton iteration for h did not converge (max gradient {np.max(np.abs(grad)):.3g})")


def csv_h_mode(
    data: VARData, A: np.ndarray, Sigma: np.ndarray, phi: float, sigma2: float, h0: np.ndarray | None = None
) -> np.ndarray:
    """Mode of the conditional density of h given (A, Sigma, phi, sigma2)."""
    h0 = np.zeros(data.T) if h0 is None else np.asarray(h0, dtype=float)
    mode, _ = _newton_mode(h0, _quad_forms(data, A, Sigma), data.n, BandedPrecision.ar1(phi, sigma2, data.T))
    return mode


def csv_sample_h(
    rng: np.random.Generator,
    data: VARData,
    A: np.ndarray,
    Sigma: np.ndarray,
    phi: float,
    sigma2: float,
    h_current: np.ndarray,
    *,
    max_ar_tries: int = 1000,
) -> tuple[np.ndarray, bool]:
    """Acceptance-rejection Metropolis-Hastings draw of the common log-volatility.

    The proposal is the Gaussian centred at the conditional mode with the
    negative Hessian as precision. Returns the new path and the MH decision.
    """
    n, T = data.n, data.T
    s = _quad_forms(data, A, Sigma)
    prior_K = BandedPrecision.ar1(phi, sigma2, T)
    mode, Kh = _newton_mode(np.asarray(h_current, dtype=float), s, n, prior_K)
    Lh = Kh.cholesky()

    def log_g(x):
        d = x - mode
        return -0.5 * float(d @ Kh.matvec(d))

    def log_f(x):
        return csv_log_h_kernel(x, s, n, prior_K)

    log_c = log_f(mode) - log_g(mode)

    def propose():
        u, info = lapack.dtbtrs(Lh, rng.standard_normal(T), uplo="L", trans="T", diag="N")
        if info != 0:
            raise np.linalg.LinAlgError(f"banded triangular solve failed (info={info})")
        return mode + u

    # acceptance-rejection step: draws from min(f, c g) up to normalisation
    for _ in range(max_ar_tries):
        cand = propose()
        lf, lg = log_f(cand), log_g(cand)
        if np.log(rng.random()) < min(0.0, lf - log_c - lg):
            break
    # Metropolis-Hastings correction
    h = np.asarray(h_current, dtype=float)
    lf_h, lg_h = log_f(h), log_g(h)
    if lf_h < log_c + lg_h:
        log_alpha = 0.0
    elif lf < log_c + lg:
        log_alpha = log_c + lg_h - lf_h
    else:
        log_alpha = min(0.0, lf + lg_h - lf_h - lg)
    if np.log(rng.random()) < log_alpha:
        return cand, True
    return h.copy(), False


def csv_sample_kappa(
    rng: np.random.Generator, A: np.ndarray, Sigma: np.ndarray, prior: ConjugatePrior
) -> float:
    p_bar, a_bar, b_bar = kappa_gig_params(
        "conjugate", A, prior.A0, prior.lag_constants, prior.hyper, n=prior.n, p=prior.p, Sigma=Sigma
    )
    return draw_gig(rng, p_bar, a_bar, b_bar)


def var_posterior_draws(
    rng: np.random.Generator, data: VARData, prior: ConjugatePrior, kappa: float, size: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Independent draws from the homoskedastic VAR posterior at fixed kappa."""
    return [csv_sample_A_Sigma(rng, data, None, kappa, prior) for _ in range(size)]
