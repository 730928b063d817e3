"""Closed-form integrated likelihoods used inside the marginal-likelihood estimators.

Every function returns a log density. Determinants come from Cholesky
factors and quadratic forms are computed as residual sums of squares rather
than as differences of large terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .data import VARData, impact_matrix, loadings_matrix
from .priors import ConjugatePrior, EquationPrior
from .stochastics import ln_multivariate_gamma

__all__ = [
    "ConjugatePosterior",
    "conjugate_posterior",
    "csv_integrated_likelihood",
    "homoskedastic_var_log_ml",
    "log_ph_given_phi",
    "sv_integrated_likelihood",
    "fsv_integrated_likelihood",
    "fsv_conditional_loglik",
    "fsv_covariances",
    "sv_prior_variances",
    "fsv_prior_variances",
]

LOG_2PI = np.log(2.0 * np.pi)


def _chol(M: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(M)
        raise np.linalg.LinAlgError(f"{what} is not positive definite (condition number {cond:.3g})") from exc


def _logdet_chol(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1))))


@dataclass(frozen=True)
class ConjugatePosterior:
    """Normal-inverse-Wishart posterior of (A, Sigma) given a volatility path."""

    A_hat: np.ndarray
    K_chol: np.ndarray  # lower Cholesky factor of K_A
    S_hat: np.ndarray
    nu: float
    V_A: np.ndarray


def conjugate_posterior(data: VARData, h: np.ndarray | None, kappa: float, prior: ConjugatePrior) -> ConjugatePosterior:
    V = prior.V_A(kappa)
    if h is None:
        Xw, Yw = data.X, data.Y
    else:
        w = np.exp(-0.5 * np.asarray(h, dtype=float))
        Xw, Yw = data.X * w[:, None], data.Y * w[:, None]
    K = Xw.T @ Xw
    K[np.diag_indices_from(K)] += 1.0 / V
    Lk = _chol(K, "K_A")
    rhs = prior.A0 / V[:, None] + Xw.T @ Yw
    A_hat = linalg.cho_solve((Lk, True), rhs)
    E = Yw - Xw @ A_hat
    D = A_hat - prior.A0
    S_hat = prior.S0 + E.T @ E + D.T @ (D / V[:, None])
    S_hat = 0.5 * (S_hat + S_hat.T)
    return ConjugatePosterior(A_hat, Lk, S_hat, prior.nu0 + data.T, V)


def csv_integrated_likelihood(data: VARData, h: np.ndarray, kappa: float, prior: ConjugatePrior) -> float:
    """log p(Y | h, kappa) with (A, Sigma) integrated out analytically."""
    h = np.asarray(h, dtype=float)
    if h.shape != (data.T,):
        raise ValueError(f"h must have length T={data.T}, got {h.shape}")
    T, n = data.T, data.n
    post = conjugate_posterior(data, h, kappa, prior)
    Ls = _chol(post.S_hat, "posterior scale S_hat")
    L0 = np.linalg.cholesky(prior.S0)
    return (
        -0.5 * T * n * np.log(np.pi)
        - 0.5 * n * float(h.sum())
        - 0.5 * n * float(np.sum(np.log(post.V_A)))
        - 0.5 * n * _logdet_chol(post.K_chol)
        + ln_multivariate_gamma(n, 0.5 * (prior.nu0 + T))
        - ln_multivariate_gamma(n, 0.5 * prior.nu0)
        + 0.5 * prior.nu0 * _logdet_chol(L0)
        - 0.5 * (prior.nu0 + T) * _logdet_chol(Ls)
    )


def homoskedastic_var_log_ml(data: VARData, prior: ConjugatePrior, kappa: float) -> float:
    """Exact log evidence of the homoskedastic VAR under the conjugate prior.

    Evaluates the matrix-t density of Y directly: with P = I + X V_A X',
    Y - X A0 is matrix-t with row scale P, column scale S0 and nu0 degrees of
    freedom.
    """
    T, n = data.T, data.n
    V = prior.V_A(kappa)
    X, Y = data.X, data.Y
    P = np.eye(T) + (X * V) @ X.T
    Lp = _chol(P, "I + X V_A X'")
    E = Y - X @ prior.A0
    Z = linalg.solve_triangular(Lp, E, lower=True)
    S = prior.S0 + Z.T @ Z
    Ls = _chol(0.5 * (S + S.T), "posterior scale")
    L0 = np.linalg.cholesky(prior.S0)
    return (
        -0.5 * T * n * np.log(np.pi)
        + ln_multivariate_gamma(n, 0.5 * (prior.nu0 + T))
        - ln_multivariate_gamma(n, 0.5 * prior.nu0)
        - 0.5 * n * _logdet_chol(Lp)
        + 0.5 * prior.nu0 * _logdet_chol(L0)
        - 0.5 * (prior.nu0 + T) * _logdet_chol(Ls)
    )


def log_ph_given_phi(h: np.ndarray, mu: float, phi: float, nu: float, S: float) -> float:
    """log p(h | mu, phi) for a stationary AR(1) with sigma2 ~ IG(nu, S) integrated out."""
    if not abs(phi) < 1:
        raise ValueError(f"|phi| must be < 1, got {phi}")
    h = np.asarray(h, dtype=float)
    T = h.size
    d = h - mu
    e = d[1:] - phi * d[:-1]
    S_post = S + 0.5 * ((1.0 - phi * phi) * d[0] ** 2 + e @ e)
    return float(
        -0.5 * T * LOG_2PI
        + 0.5 * np.log1p(-phi * phi)
        + gammaln(nu + 0.5 * T)
        - gammaln(nu)
        + nu * np.log(S)
        - (nu + 0.5 * T) * np.log(S_post)
    )


# ---------------------------------------------------------------------------
# equation-by-equation models


def sv_prior_variances(prior: EquationPrior, kappa1: float, kappa2: float) -> np.ndarray:
    """Stacked prior variances of (alpha_1, ..., alpha_n)."""
    return np.concatenate([prior.V_alpha(i, kappa1, kappa2) for i in range(prior.n)])


fsv_prior_variances = sv_prior_variances


def _gaussian_coef_evidence(
    V: np.ndarray, K: np.ndarray, rhs: np.ndarray, resid_quad, what: str
) -> tuple[float, np.ndarray]:
    """Shared tail of the coefficient integration: returns (log terms, alpha_hat)."""
    K[np.diag_indices_from(K)] += 1.0 / V
    Lk = _chol(K, what)
    a_hat = linalg.cho_solve((Lk, True), rhs)
    quad = resid_quad(a_hat) + float(a_hat @ (a_hat / V))
    return -0.5 * float(np.sum(np.log(V))) - 0.5 * _logdet_chol(Lk) - 0.5 * quad, a_hat


def sv_integrated_likelihood(
    data: VARData,
    beta,
    h: np.ndarray,
    kappas: tuple[float, float],
    prior: EquationPrior,
) -> float:
    """log p(Y | B0, h, kappa) with the VAR coefficients integrated out.

    ``beta`` may be the sequence of free impact rows or the full B0 matrix.
    """
    T, n, k = data.T, data.n, data.k
    B0 = np.asarray(beta, dtype=float) if isinstance(beta, np.ndarray) and np.ndim(beta) == 2 else impact_matrix(beta, n)
    h = np.asarray(h, dtype=float)
    if h.shape != (n, T):
        raise ValueError(f"h must be {n} x {T}, got {h.shape}")
    X = data.X
    W = np.exp(-h)  # (n, T)
    Yt = data.Y @ B0.T  # column j is the j-th structural combination
    M = np.einsum("tk,jt,tl->jkl", X, W, X)  # X' D_j^{-1} X
    K = np.einsum("ja,jb,jkl->akbl", B0, B0, M).reshape(n * k, n * k)
    r = np.einsum("tk,jt,tj->jk", X, W, Yt)  # X' D_j^{-1} ytilde_j
    rhs = np.einsum("ja,jk->ak", B0, r).reshape(n * k)
    V = sv_prior_variances(prior, *kappas)

    def resid_quad(a_hat):
        A = a_hat.reshape(n, k).T  # k x n
        E = Yt - X @ A @ B0.T
        return float(np.sum(E * E * W.T))

    tail, _ = _gaussian_coef_evidence(V, K, rhs, resid_quad, "K_alpha")
    return -0.5 * n * T * LOG_2PI - 0.5 * float(h.sum()) + tail


def fsv_covariances(L: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Per-period covariances D_t + L G_t L' as a (T, n, n) array."""
    n, r = L.shape
    h = np.asarray(h, dtype=float)
    D = np.exp(h[:n])  # (n, T)
    S = np.einsum("ir,rt,jr->tij", L, np.exp(h[n : n + r]), L) if r else np.zeros((h.shape[1], n, n))
    idx = np.arange(n)
    S[:, idx, idx] += D.T
    return S


def _fsv_loadings(l, n: int, r: int) -> np.ndarray:
    if isinstance(l, np.ndarray) and l.ndim == 2:
        return np.asarray(l, dtype=float)
    return loadings_matrix(l, n, r)


def _batched_chol(S: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        for t in range(S.shape[0]):
            try:
                np.linalg.cholesky(S[t])
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(f"covariance block at t={t} is not positive definite") from exc
        raise


def fsv_integrated_likelihood(
    data: VARData,
    l,
    h: np.ndarray,
    kappas: tuple[float, float],
    prior: EquationPrior,
    r: int | None = None,
) -> float:
    """log p(Y | L, h, kappa) with factors and VAR coefficients integrated out."""
    T, n, k = data.T, data.n, data.k
    h = np.asarray(h, dtype=float)
    if r is None:
        r = h.shape[0] - n
    L = _fsv_loadings(l, n, r)
    if h.shape != (n + r, T):
        raise ValueError(f"h must be {n + r} x {T}, got {h.shape}")
    X, Y = data.X, data.Y
    S = fsv_covariances(L, h)
    C = _batched_chol(S)
    eye = np.broadcast_to(np.eye(n), S.shape)
    Cinv = np.linalg.solve(C, eye)
    P = np.einsum("tki,tkj->tij", Cinv, Cinv)  # S_t^{-1}
    K = np.einsum("tij,tk,tl->ikjl", P, X, X).reshape(n * k, n * k)
    rhs = np.einsum("tij,tj,tk->ik", P, Y, X).reshape(n * k)
    V = fsv_prior_variances(prior, *kappas)

    def resid_quad(a_hat):
        E = Y - X @ a_hat.reshape(n, k).T
        return float(np.einsum("ti,tij,tj->", E, P, E))

    tail, _ = _gaussian_coef_evidence(V, K, rhs, resid_quad, "K_alpha")
    logdet_S = 2.0 * float(np.sum(np.log(np.diagonal(C, axis1=1, axis2=2))))
    return -0.5 * n * T * LOG_2PI - 0.5 * logdet_S + tail


def fsv_conditional_loglik(data: VARData, alpha: np.ndarray, L: np.ndarray, h: np.ndarray) -> float:
    """log p(Y | alpha, L, h) with the factors integrated out."""
    n = data.n
    E = data.Y - data.X @ np.asarray(alpha, dtype=float).T
    C = _batched_chol(fsv_covariances(L, h))
    z = np.linalg.solve(C, E[:, :, None])[:, :, 0]
    return float(
        -0.5 * n * data.T * LOG_2PI
        - np.sum(np.log(np.diagonal(C, axis1=1, axis2=2)))
        - 0.5 * np.sum(z * z)
    )
