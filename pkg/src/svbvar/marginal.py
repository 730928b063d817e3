"""Importance-sampling estimates of the log marginal likelihood.

The importance density covers only the volatility block and the
hyperparameters; everything else is integrated analytically inside the
integrand.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from scipy import special

from .crossentropy import ISFamily
from .data import VARData, impact_matrix, loadings_matrix
from .likelihoods import (
    csv_integrated_likelihood,
    fsv_integrated_likelihood,
    log_ph_given_phi,
    sv_integrated_likelihood,
)
from .priors import ConjugatePrior, EquationPrior, VolatilityPrior

__all__ = [
    "MLEstimate",
    "estimate_from_log_weights",
    "importance_log_ml",
    "is_log_ml",
    "log_integrand",
    "family_point",
    "log_tn_phi_prior",
]

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MLEstimate:
    log_ml: float
    nse: float
    R: int
    ess: float
    method: str = "is"
    flags: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not np.isfinite(self.nse) or self.nse < 0:
            raise ValueError(f"NSE must be finite and non-negative, got {self.nse}")
        if self.ess > self.R * (1 + 1e-9):
            raise ValueError("ESS cannot exceed the sample size")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


def estimate_from_log_weights(log_w: np.ndarray, *, method: str = "is") -> MLEstimate:
    """Log of the mean weight with a delta-method standard error and ESS."""
    log_w = np.asarray(log_w, dtype=float).reshape(-1)
    R = log_w.size
    if R < 2:
        raise ValueError("need at least two weights")
    if np.any(np.isnan(log_w)):
        raise FloatingPointError("log-weights contain NaN")
    top = np.max(log_w)
    if not np.isfinite(top):
        raise ValueError("every importance weight is zero: the family misses the target's support")
    w = np.exp(log_w - top)
    mean = w.mean()
    nse = float(w.std() / (np.sqrt(R) * mean))
    ess = float(w.sum() ** 2 / np.sum(w * w))
    flags = ("low_ess",) if ess < 10 else ()
    return MLEstimate(float(top + np.log(mean)), nse, R, ess, method, flags)


def importance_log_ml(
    log_target: Callable[[Any], float],
    family,
    R: int,
    rng: np.random.Generator,
    *,
    method: str = "is",
) -> tuple[MLEstimate, np.ndarray]:
    """Generic estimator: ``family`` exposes ``sample(rng, R)`` and ``logpdf(draws)``.

    ``log_target`` maps the r-th draw (via :func:`family_point`) to the log of
    the unnormalised posterior. Returns the estimate and the log-weights.
    """
    draws = family.sample(rng, R)
    log_q = np.asarray(family.logpdf(draws), dtype=float)
    log_w = np.empty(R)
    for r in range(R):
        log_w[r] = log_target(family_point(draws, r)) - log_q[r]
    return estimate_from_log_weights(log_w, method=method), log_w


def family_point(draws, r: int):
    if isinstance(draws, Mapping):
        return {k: v[r] for k, v in draws.items()}
    return draws[r]


# ---------------------------------------------------------------------------
# priors of the sampled blocks


def log_tn_phi_prior(phi: float, vol: VolatilityPrior) -> float:
    if not abs(phi) < 1:
        return -np.inf
    sd = np.sqrt(vol.V_phi)
    log_mass = np.log(special.ndtr((1 - vol.phi0) / sd) - special.ndtr((-1 - vol.phi0) / sd))
    return float(-0.5 * (LOG_2PI + np.log(vol.V_phi)) - 0.5 * (phi - vol.phi0) ** 2 / vol.V_phi - log_mass)


def _log_normal(x, mean, var) -> float:
    x = np.asarray(x, dtype=float)
    var = np.broadcast_to(np.asarray(var, dtype=float), x.shape)
    return float(-0.5 * np.sum(LOG_2PI + np.log(var) + (x - mean) ** 2 / var))


def _log_gamma(x: float, hyper: tuple[float, float]) -> float:
    if not x > 0:
        return -np.inf
    c1, c2 = hyper
    return float(c1 * np.log(c2) - special.gammaln(c1) + (c1 - 1) * np.log(x) - c2 * x)


def _resolve_kappas(point: Mapping[str, Any], prior: EquationPrior) -> dict[str, float]:
    kap = prior.initial_kappas()
    for nm in ("kappa1", "kappa2", "kappa3"):
        if nm in point:
            kap[nm] = float(point[nm])
    if prior.mode == "symmetric":
        kap["kappa2"] = kap["kappa1"]
    return kap


def _kappa_prior(point: Mapping[str, Any], prior: EquationPrior, model: str) -> float:
    total = 0.0
    for nm in prior.free_kappas(model):
        total += _log_gamma(float(point[nm]), prior.hyper[nm])
    return total


# ---------------------------------------------------------------------------
# model integrands


def log_integrand(model: str, data: VARData, prior, point: Mapping[str, Any]) -> float:
    """log[g(y | psi) p(psi)] for a point psi of the importance-sampled blocks."""
    if model == "csv":
        return _csv_integrand(data, prior, point)
    if model == "sv":
        return _sv_integrand(data, prior, point)
    if model == "fsv":
        return _fsv_integrand(data, prior, point)
    raise ValueError(f"unknown model {model!r}")


def _csv_integrand(data: VARData, prior: ConjugatePrior, point: Mapping[str, Any]) -> float:
    phi = float(point["phi"])
    lp = log_tn_phi_prior(phi, prior.vol)
    if not np.isfinite(lp):
        return -np.inf
    if prior.kappa_fixed is None:
        kappa = float(point["kappa"])
        lp += _log_gamma(kappa, prior.hyper)
        if not np.isfinite(lp):
            return -np.inf
    else:
        kappa = prior.kappa_fixed
    h = np.asarray(point["h"], dtype=float)
    lp += log_ph_given_phi(h, 0.0, phi, prior.vol.nu, prior.vol.S)
    return lp + csv_integrated_likelihood(data, h, kappa, prior)


def _volatility_terms(prior: EquationPrior, point: Mapping[str, Any], count: int) -> tuple[float, np.ndarray]:
    total = 0.0
    hs = []
    for j in range(count):
        vol = prior.volatility_prior(j)
        phi = float(point[f"phi{j}"])
        lp = log_tn_phi_prior(phi, vol)
        if not np.isfinite(lp):
            return -np.inf, np.empty(0)
        mu = float(point[f"mu{j}"])
        h = np.asarray(point[f"h{j}"], dtype=float)
        total += lp + _log_normal(mu, vol.mu0, vol.V_mu) + log_ph_given_phi(h, mu, phi, vol.nu, vol.S)
        hs.append(h)
    return total, np.vstack(hs)


def _sv_integrand(data: VARData, prior: EquationPrior, point: Mapping[str, Any]) -> float:
    n = data.n
    kp = _kappa_prior(point, prior, "sv")
    if not np.isfinite(kp):
        return -np.inf
    kap = _resolve_kappas(point, prior)
    lp, H = _volatility_terms(prior, point, n)
    if not np.isfinite(lp):
        return -np.inf
    beta = [np.empty(0)] + [np.asarray(point[f"beta{i}"], dtype=float).reshape(-1) for i in range(1, n)]
    for i in range(1, n):
        lp += _log_normal(beta[i], 0.0, prior.V_beta(i, kap["kappa3"]))
    B0 = impact_matrix(beta, n)
    return kp + lp + sv_integrated_likelihood(data, B0, H, (kap["kappa1"], kap["kappa2"]), prior)


def _fsv_integrand(data: VARData, prior: EquationPrior, point: Mapping[str, Any]) -> float:
    n = data.n
    count = sum(1 for k in point if k.startswith("h"))
    r = count - n
    kp = _kappa_prior(point, prior, "fsv")
    if not np.isfinite(kp):
        return -np.inf
    kap = _resolve_kappas(point, prior)
    lp, H = _volatility_terms(prior, point, count)
    if not np.isfinite(lp):
        return -np.inf
    rows = []
    for i in range(n):
        m = min(i, r)
        row = np.asarray(point[f"l{i}"], dtype=float).reshape(-1) if m else np.empty(0)
        if m:
            lp += _log_normal(row, 0.0, prior.V_l)
        rows.append(row)
    L = loadings_matrix(rows, n, r)
    return kp + lp + fsv_integrated_likelihood(data, L, H, (kap["kappa1"], kap["kappa2"]), prior, r=r)


def is_log_ml(
    model: str,
    data: VARData,
    prior,
    family: ISFamily,
    R: int,
    rng: np.random.Generator,
) -> MLEstimate:
    """Importance-sampling estimate of log p(Y) under ``model``."""
    if family.model != model:
        raise ValueError(f"family was fitted for {family.model!r}, not {model!r}")
    if R < 2:
        raise ValueError("R must be at least 2")
    est, _ = importance_log_ml(lambda pt: log_integrand(model, data, prior, pt), family, R, rng)
    return est
