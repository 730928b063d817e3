"""Gibbs steps for the VAR with factor stochastic volatility."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..data import VARData
from .sv import gaussian_regression_draw

__all__ = ["fsv_sample_factors", "fsv_sample_theta"]


def fsv_sample_factors(rng: np.random.Generator, eps: np.ndarray, L: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Draw the r x T factor matrix given residuals ``eps`` (T x n).

    The conditional is independent across periods, so each period is an
    r x r Gaussian draw, done here in one batched factorisation.
    """
    T, n = eps.shape
    r = L.shape[1]
    if r == 0:
        return np.zeros((0, T))
    h = np.asarray(h, dtype=float)
    Dinv = np.exp(-h[:n])  # (n, T)
    Ginv = np.exp(-h[n : n + r])  # (r, T)
    K = np.einsum("ia,it,ib->tab", L, Dinv, L)
    idx = np.arange(r)
    K[:, idx, idx] += Ginv.T
    try:
        C = np.linalg.cholesky(K)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("factor posterior precision is not positive definite") from exc
    c = np.einsum("ia,it,ti->ta", L, Dinv, eps)
    y = np.linalg.solve(C, c[:, :, None])
    z = rng.standard_normal((T, r, 1))
    f = np.linalg.solve(np.swapaxes(C, 1, 2), y + z)[:, :, 0]
    return f.T


def fsv_sample_theta(
    rng: np.random.Generator,
    data: VARData,
    f: np.ndarray,
    h: np.ndarray,
    V_alpha: Sequence[np.ndarray],
    V_l: float = 1.0,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Joint draw of (alpha_i, l_i) for every equation, which are conditionally independent.

    Equation i regresses on (X, f_1, ..., f_m) with m = min(i, r) free
    loadings; for i < r the unit loading on factor i is subtracted first.
    """
    X, Y = data.X, data.Y
    T, n = Y.shape
    r = f.shape[0]
    k = X.shape[1]
    w_all = np.exp(-np.asarray(h, dtype=float)[:n])
    alpha = np.empty((n, k))
    loads: list[np.ndarray] = []
    for i in range(n):
        m = min(i, r)
        Z = np.hstack([X, f[:m].T]) if m else X
        y = Y[:, i] - f[i] if i < r else Y[:, i]
        Zw = Z * w_all[i][:, None]
        K = Zw.T @ Z
        prec = np.concatenate([1.0 / V_alpha[i], np.full(m, 1.0 / V_l)])
        K[np.diag_indices_from(K)] += prec
        theta = gaussian_regression_draw(rng, K, Zw.T @ y, f"K_theta for equation {i}")
        alpha[i] = theta[:k]
        loads.append(theta[k:].copy())
    return alpha, loads
