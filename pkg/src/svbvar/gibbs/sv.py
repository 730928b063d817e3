"""Gibbs steps for the VAR with Cholesky stochastic volatility."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import linalg

from ..data import VARData, impact_matrix
from ..priors import EquationPrior, kappa_gig_params
from ..stochastics import draw_gig

__all__ = [
    "gaussian_regression_draw",
    "sv_sample_alpha",
    "sv_sample_beta",
    "sample_equation_kappas",
]


def gaussian_regression_draw(
    rng: np.random.Generator, K: np.ndarray, c: np.ndarray, what: str = "posterior precision"
) -> np.ndarray:
    """Draw from N(K^{-1} c, K^{-1}) for a dense precision K."""
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"{what} is not positive definite (dimension {K.shape[0]})") from exc
    mean = linalg.cho_solve((L, True), c)
    return mean + linalg.solve_triangular(L, rng.standard_normal(c.size), lower=True, trans="T")


def sv_sample_alpha(
    rng: np.random.Generator,
    data: VARData,
    alpha: np.ndarray,
    B0: np.ndarray,
    h: np.ndarray,
    V_alpha: Sequence[np.ndarray],
    alpha0: np.ndarray | None = None,
) -> np.ndarray:
    """Equation-by-equation draw of the reduced-form coefficients.

    ``alpha`` is n x k with row i the coefficients of equation i. Each
    equation is drawn from its full conditional given the others, which
    accounts for every structural equation that loads on it.
    """
    X, Y = data.X, data.Y
    n, k = alpha.shape
    alpha = np.array(alpha, dtype=float, copy=True)
    if alpha0 is None:
        alpha0 = np.zeros_like(alpha)
    W = np.exp(-np.asarray(h, dtype=float))  # (n, T)
    M = np.einsum("tk,jt,tl->jkl", X, W, X)
    for i in range(n):
        A_rest = alpha.T.copy()
        A_rest[:, i] = 0.0
        Z = (Y - X @ A_rest) @ B0.T  # T x n
        b = B0[:, i]
        rows = np.flatnonzero(b)
        K = np.einsum("j,jkl->kl", b[rows] ** 2, M[rows])
        K[np.diag_indices(k)] += 1.0 / V_alpha[i]
        c = alpha0[i] / V_alpha[i] + X.T @ ((Z[:, rows] * W[rows].T) @ b[rows])
        alpha[i] = gaussian_regression_draw(rng, K, c, f"K_alpha for equation {i}")
    return alpha


def sv_sample_beta(
    rng: np.random.Generator,
    eps: np.ndarray,
    h: np.ndarray,
    V_beta: Sequence[np.ndarray],
) -> list[np.ndarray]:
    """Draw the free impact rows given reduced-form residuals ``eps`` (T x n).

    Row i of B0 eps_t = u_t reads eps_i = -eps_{<i} beta_i + u_i.
    """
    T, n = eps.shape
    W = np.exp(-np.asarray(h, dtype=float))
    out = [np.empty(0)]
    for i in range(1, n):
        E = -eps[:, :i]
        Ew = E * W[i][:, None]
        K = Ew.T @ E
        K[np.diag_indices(i)] += 1.0 / V_beta[i]
        c = Ew.T @ eps[:, i]
        out.append(gaussian_regression_draw(rng, K, c, f"K_beta for row {i}"))
    return out


def sample_equation_kappas(
    rng: np.random.Generator,
    alpha: np.ndarray,
    prior: EquationPrior,
    kappas: dict[str, float],
    *,
    beta: Sequence[np.ndarray] | None = None,
) -> dict[str, float]:
    """Update the free shrinkage scales from their GIG conditionals."""
    n, p = prior.n, prior.p
    kappas = dict(kappas)
    own_c, own_v, oth_c, oth_v = [], [], [], []
    for i in range(n):
        own, C = prior.alpha_groups(i)
        coefs = alpha[i, 1:]
        own_c.append(coefs[own])
        own_v.append(C[own])
        oth_c.append(coefs[~own])
        oth_v.append(C[~own])
    own_c, own_v = np.concatenate(own_c), np.concatenate(own_v)
    oth_c, oth_v = np.concatenate(oth_c), np.concatenate(oth_v)
    free = set(prior.free_kappas("sv" if beta is not None else "fsv"))
    if prior.mode == "symmetric":
        if "kappa1" in free:
            pb, ab, bb = kappa_gig_params(
                "symmetric",
                np.concatenate([own_c, oth_c]),
                0.0,
                np.concatenate([own_v, oth_v]),
                prior.hyper["kappa1"],
                n=n,
                p=p,
            )
            kappas["kappa1"] = kappas["kappa2"] = draw_gig(rng, pb, ab, bb)
    else:
        if "kappa1" in free:
            kappas["kappa1"] = draw_gig(rng, *kappa_gig_params("own", own_c, 0.0, own_v, prior.hyper["kappa1"], n=n, p=p))
        if "kappa2" in free and n > 1:
            kappas["kappa2"] = draw_gig(rng, *kappa_gig_params("other", oth_c, 0.0, oth_v, prior.hyper["kappa2"], n=n, p=p))
    if beta is not None and "kappa3" in free and n > 1:
        flat = np.concatenate([beta[i] for i in range(1, n)])
        C3 = np.concatenate([prior.V_beta(i, 1.0) for i in range(1, n)])
        kappas["kappa3"] = draw_gig(rng, *kappa_gig_params("impact", flat, 0.0, C3, prior.hyper["kappa3"], n=n, p=p))
    return kappas


def structural_residuals(data: VARData, alpha: np.ndarray, beta: Sequence[np.ndarray]) -> np.ndarray:
    E = data.Y - data.X @ alpha.T
    return E @ impact_matrix(beta, data.n).T
