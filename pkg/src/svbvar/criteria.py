"""Modified harmonic mean evidence estimates and the observed-data DIC."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .crossentropy import Ar1GaussianFamily, ISFamily, build_is_family, fit_ar1_family
from .data import ChainOutput, VARData, loadings_matrix
from .likelihoods import fsv_conditional_loglik
from .marginal import MLEstimate, log_integrand

__all__ = [
    "TruncatedGaussianTuning",
    "build_truncated_gaussian",
    "gd_log_ml",
    "chain_points",
    "model_gd_log_ml",
    "ar1_prior_logpdf",
    "ObservedLoglik",
    "observed_loglik",
    "fsv_observed_loglik",
    "DicResult",
    "compute_dic",
    "posterior_mean_point",
    "chain_parameters",
    "model_dic",
]

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class TruncatedGaussianTuning:
    """Gaussian restricted to a Mahalanobis ball holding 1 - alpha of its mass."""

    mean: np.ndarray
    cov: np.ndarray
    alpha: float = 0.05

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                "tuning covariance is singular; split the parameters into smaller blocks"
            ) from exc
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def threshold(self) -> float:
        return float(stats.chi2.ppf(1.0 - self.alpha, self.dim))

    @property
    def log_mass(self) -> float:
        return float(np.log1p(-self.alpha))

    def mahalanobis(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        z = np.linalg.solve(self._chol, (x - self.mean).T)
        return np.sum(z * z, axis=0)

    def inside(self, x: np.ndarray) -> np.ndarray:
        return self.mahalanobis(x) < self.threshold

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        q = self.mahalanobis(x)
        logdet = np.sum(np.log(np.diag(self._chol)))
        out = -0.5 * self.dim * LOG_2PI - logdet - 0.5 * q - self.log_mass
        return np.where(q < self.threshold, out, -np.inf)


def build_truncated_gaussian(draws: np.ndarray, alpha: float = 0.05) -> TruncatedGaussianTuning:
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    M, m = x.shape
    if M <= m:
        raise ValueError(f"need more draws than dimensions, got {M} draws of dimension {m}")
    return TruncatedGaussianTuning(x.mean(axis=0), np.cov(x, rowvar=False).reshape(m, m), alpha)


def gd_log_ml(
    psi_draws: Sequence[Any],
    log_tuning: Callable[[Sequence[Any]], np.ndarray],
    log_g: Callable[[Any], float],
    log_prior: Callable[[Any], float] | None = None,
    *,
    batches: int | None = None,
    method: str = "gd",
) -> MLEstimate:
    """Modified harmonic mean estimate from posterior draws of psi.

    ``log_tuning`` is evaluated on all draws at once; ``log_g`` and
    ``log_prior`` per draw. When ``log_prior`` is None, ``log_g`` must return
    the joint log g(y | psi) + log p(psi). The NSE uses batch means when
    ``batches`` is given and treats the draws as independent otherwise.
    """
    M = len(psi_draws)
    if M < 2:
        raise ValueError("need at least two posterior draws")
    log_f = np.asarray(log_tuning(psi_draws), dtype=float).reshape(-1)
    inside = np.isfinite(log_f)
    if not inside.any():
        raise ValueError("no posterior draw falls inside the tuning support")
    log_r = np.full(M, -np.inf)
    for i in np.flatnonzero(inside):
        kernel = log_g(psi_draws[i])
        if log_prior is not None:
            kernel += log_prior(psi_draws[i])
        if not np.isfinite(kernel):
            raise FloatingPointError(f"posterior kernel is not finite at draw {i}")
        log_r[i] = log_f[i] - kernel
    top = np.max(log_r)
    w = np.exp(log_r - top)
    mean = w.mean()
    if batches:
        usable = (M // batches) * batches
        bm = w[:usable].reshape(batches, -1).mean(axis=1)
        nse = float(bm.std(ddof=1) / (np.sqrt(batches) * mean))
    else:
        nse = float(w.std() / (np.sqrt(M) * mean))
    ess = float(w.sum() ** 2 / np.sum(w * w))
    flags = ("low_ess",) if ess < 10 else ()
    return MLEstimate(float(-(top + np.log(mean))), nse, M, ess, method, flags)


# ---------------------------------------------------------------------------
# GD on model chains


def chain_points(model: str, chain: ChainOutput, free_kappas: Sequence[str] | None = None) -> list[dict[str, np.ndarray]]:
    """Chain draws as points keyed like the importance family blocks."""
    if free_kappas is None:
        free_kappas = tuple(chain.metadata.get("free_kappas", ()))
    points = []
    for d in chain.draws:
        pt: dict[str, Any] = {}
        if model == "csv":
            pt["h"] = np.asarray(d.h, dtype=float)
            pt["phi"] = float(d.phi)
        else:
            key = "beta" if model == "sv" else "l"
            for i, row in enumerate(getattr(d, key)):
                if row.size:
                    pt[f"{key}{i}"] = np.asarray(row, dtype=float)
            for j in range(d.h.shape[0]):
                pt[f"h{j}"] = np.asarray(d.h[j], dtype=float)
                pt[f"mu{j}"] = float(d.mu[j])
                pt[f"phi{j}"] = float(d.phi[j])
        for nm in free_kappas:
            pt[nm] = float(getattr(d, nm))
        points.append(pt)
    return points


def _is_h(name: str) -> bool:
    return name == "h" or (name.startswith("h") and name[1:].isdigit())


def _to_unconstrained(name: str, value) -> np.ndarray:
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if name.startswith("phi"):
        return np.arctanh(v)
    if name.startswith("kappa"):
        return np.log(v)
    return v


def _log_jacobian(point: Mapping[str, Any]) -> float:
    """log |d theta / d z| for phi = tanh(z) and kappa = exp(z)."""
    total = 0.0
    for name, v in point.items():
        if name.startswith("phi"):
            total += float(np.log1p(-float(v) ** 2))
        elif name.startswith("kappa"):
            total += float(np.log(v))
    return total


def _stack(points: Sequence[Mapping[str, Any]], names: Sequence[str]) -> np.ndarray:
    return np.array([np.concatenate([_to_unconstrained(nm, pt[nm]) for nm in names]) for pt in points])


def model_gd_log_ml(
    model: str,
    data: VARData,
    prior,
    chain: ChainOutput,
    *,
    variant: str = "gd2",
    alpha: float = 0.05,
    batches: int | None = 20,
    h_family: ISFamily | None = None,
) -> MLEstimate:
    """GD estimate with the coefficient blocks integrated out analytically.

    ``gd1`` uses one truncated Gaussian over every sampled block (phi and
    kappa on the unconstrained scale); ``gd2`` replaces the log-volatility
    part by the fitted AR(1) Gaussian densities.
    """
    if variant not in ("gd1", "gd2"):
        raise ValueError(f"unknown GD variant {variant!r}")
    points = chain_points(model, chain)
    names = list(points[0])
    h_names = [nm for nm in names if _is_h(nm)]
    rest = [nm for nm in names if not _is_h(nm)] if variant == "gd2" else names
    tg = build_truncated_gaussian(_stack(points, rest), alpha) if rest else None
    if variant == "gd2":
        if h_family is None:
            h_blocks = {nm: fit_ar1_family(np.stack([pt[nm] for pt in points])) for nm in h_names}
        else:
            h_blocks = {nm: h_family[nm] for nm in h_names}

    def log_tuning(pts):
        total = tg.logpdf(_stack(pts, rest)) if tg is not None else np.zeros(len(pts))
        if variant == "gd2":
            for nm, blk in h_blocks.items():
                total = total + blk.logpdf(np.stack([pt[nm] for pt in pts]))
        return total

    def log_kernel(pt):
        return log_integrand(model, data, prior, pt) + _log_jacobian(pt)

    return gd_log_ml(points, log_tuning, log_kernel, batches=batches, method=variant)


# ---------------------------------------------------------------------------
# observed-data likelihood


def ar1_prior_logpdf(h: np.ndarray, mu: float, phi: float, sigma2: float) -> np.ndarray:
    """Stationary Gaussian AR(1) log-density of the last axis of ``h``."""
    d = np.asarray(h, dtype=float) - mu
    T = d.shape[-1]
    e = d[..., 1:] - phi * d[..., :-1]
    ss = (1.0 - phi * phi) * d[..., 0] ** 2 + np.sum(e * e, axis=-1)
    return -0.5 * T * (LOG_2PI + np.log(sigma2)) + 0.5 * np.log1p(-phi * phi) - 0.5 * ss / sigma2


@dataclass(frozen=True)
class ObservedLoglik:
    value: float
    nse: float
    ess: float
    R: int
    flags: tuple[str, ...] = field(default_factory=tuple)


def _summarise(log_w: np.ndarray) -> ObservedLoglik:
    R = log_w.size
    top = np.max(log_w)
    if not np.isfinite(top):
        raise FloatingPointError("every importance weight underflowed")
    w = np.exp(log_w - top)
    mean = w.mean()
    ess = float(w.sum() ** 2 / np.sum(w * w))
    flags: tuple[str, ...] = ()
    if ess < 10:
        flags = ("low_ess",)
        warnings.warn(f"observed-likelihood weights are degenerate (ESS={ess:.1f})", RuntimeWarning, stacklevel=3)
    return ObservedLoglik(float(top + np.log(mean)), float(w.std() / (np.sqrt(R) * mean)), ess, R, flags)


def _family_blocks(h_family, count: int, single: bool) -> list[Ar1GaussianFamily]:
    if isinstance(h_family, Ar1GaussianFamily):
        return [h_family]
    if single:
        return [h_family["h"]]
    return [h_family[f"h{j}"] for j in range(count)]


def observed_loglik(
    model: str,
    data: VARData,
    params: Mapping[str, Any],
    h_family,
    R: int,
    rng: np.random.Generator,
) -> ObservedLoglik:
    """IS estimate of log p(Y | theta) with the log-volatilities integrated out.

    ``params`` holds the time-invariant parameters: ``A`` and ``Sigma`` with
    scalar ``phi``/``sigma2`` (csv); ``alpha``, ``B0`` (sv) or ``L`` (fsv),
    and vectors ``mu``, ``phi``, ``sigma2``.
    """
    if R < 2:
        raise ValueError("R must be at least 2")
    n, T = data.n, data.T
    if model == "csv":
        blk = _family_blocks(h_family, 1, True)[0]
        H = blk.sample(rng, R)  # R x T
        log_q = blk.logpdf(H)
        log_p = ar1_prior_logpdf(H, 0.0, float(params["phi"]), float(params["sigma2"]))
        E = data.Y - data.X @ np.asarray(params["A"], dtype=float)
        C = np.linalg.cholesky(np.asarray(params["Sigma"], dtype=float))
        z = np.linalg.solve(C, E.T)
        q = np.sum(z * z, axis=0)  # T
        logdet = 2.0 * np.sum(np.log(np.diag(C)))
        cond = -0.5 * (n * T * LOG_2PI + T * logdet) - 0.5 * n * H.sum(axis=1) - 0.5 * (np.exp(-H) @ q)
        return _summarise(cond + log_p - log_q)

    alpha = np.asarray(params["alpha"], dtype=float)
    mu, phi, sig = (np.atleast_1d(np.asarray(params[k], dtype=float)) for k in ("mu", "phi", "sigma2"))
    count = mu.size
    blocks = _family_blocks(h_family, count, False)
    Hs = [b.sample(rng, R) for b in blocks]  # each R x T
    log_qp = sum(ar1_prior_logpdf(Hs[j], mu[j], phi[j], sig[j]) - blocks[j].logpdf(Hs[j]) for j in range(count))
    H = np.stack(Hs, axis=1)  # R x count x T
    E = data.Y - data.X @ alpha.T
    if model == "sv":
        U = E @ np.asarray(params["B0"], dtype=float).T  # T x n
        Hn = H[:, :n, :]
        cond = -0.5 * (n * T * LOG_2PI + Hn.sum(axis=(1, 2)) + np.sum(U.T[None] ** 2 * np.exp(-Hn), axis=(1, 2)))
    elif model == "fsv":
        L = np.asarray(params["L"], dtype=float)
        cond = np.array([fsv_conditional_loglik(data, alpha, L, H[i]) for i in range(R)])
    else:
        raise ValueError(f"unknown model {model!r}")
    return _summarise(cond + log_qp)


def fsv_observed_loglik(
    data: VARData,
    alpha: np.ndarray,
    loadings,
    mu: np.ndarray,
    phi: np.ndarray,
    sigma2: np.ndarray,
    h_family,
    R: int,
    rng: np.random.Generator,
) -> ObservedLoglik:
    """``loadings`` is either the n x r matrix or its free rows."""
    if isinstance(loadings, np.ndarray) and loadings.ndim == 2:
        L = loadings
    else:
        L = loadings_matrix(loadings, data.n, np.atleast_1d(mu).size - data.n)
    params = {"alpha": alpha, "L": L, "mu": mu, "phi": phi, "sigma2": sigma2}
    return observed_loglik("fsv", data, params, h_family, R, rng)


# ---------------------------------------------------------------------------
# DIC


@dataclass(frozen=True)
class DicResult:
    dic: float
    mean_deviance: float
    pd: float
    deviance_at_point: float
    failures: int = 0

    @classmethod
    def from_parts(cls, mean_deviance: float, deviance_at_point: float, failures: int = 0) -> "DicResult":
        pd = mean_deviance - deviance_at_point
        return cls(mean_deviance + pd, mean_deviance, pd, deviance_at_point, failures)

    def to_dict(self) -> dict[str, float]:
        return {
            "dic": self.dic,
            "mean_deviance": self.mean_deviance,
            "pd": self.pd,
            "deviance_at_point": self.deviance_at_point,
            "failures": self.failures,
        }


def posterior_mean_point(draws: Sequence[Any]):
    first = draws[0]
    if isinstance(first, Mapping):
        return {k: np.mean([np.asarray(d[k], dtype=float) for d in draws], axis=0) for k in first}
    return np.mean(np.asarray(draws, dtype=float), axis=0)


def compute_dic(
    draws: Sequence[Any],
    loglik: Callable[[Any], float],
    point: Any | None = None,
    *,
    max_failure_rate: float = 0.01,
    min_draws: int = 100,
) -> DicResult:
    """Observed-data DIC with the deviance evaluated at the posterior mean by default."""
    M = len(draws)
    if M < min_draws:
        raise ValueError(f"need at least {min_draws} draws, got {M}")
    values = []
    failures = 0
    for d in draws:
        try:
            v = float(loglik(d))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            v = np.nan
        if np.isfinite(v):
            values.append(v)
        else:
            failures += 1
    if failures > max_failure_rate * M:
        raise RuntimeError(f"likelihood evaluation failed on {failures} of {M} draws")
    if point is None:
        point = posterior_mean_point(draws)
    at_point = float(loglik(point))
    if not np.isfinite(at_point):
        raise FloatingPointError("likelihood at the point estimate is not finite")
    return DicResult.from_parts(-2.0 * float(np.mean(values)), -2.0 * at_point, failures)


def chain_parameters(model: str, chain: ChainOutput) -> list[dict[str, np.ndarray]]:
    """Time-invariant parameters of each draw, as accepted by :func:`observed_loglik`."""
    out = []
    for d in chain.draws:
        if model == "csv":
            out.append({"A": d.A, "Sigma": d.Sigma, "phi": d.phi, "sigma2": d.sigma2})
        elif model == "sv":
            out.append({"alpha": d.alpha, "B0": d.B0, "mu": d.mu, "phi": d.phi, "sigma2": d.sigma2})
        elif model == "fsv":
            out.append({"alpha": d.alpha, "L": d.L, "mu": d.mu, "phi": d.phi, "sigma2": d.sigma2})
        else:
            raise ValueError(f"unknown model {model!r}")
    return out


def model_dic(
    model: str,
    data: VARData,
    chain: ChainOutput,
    R: int,
    rng: np.random.Generator,
    *,
    h_family: ISFamily | None = None,
) -> DicResult:
    """Observed-data DIC of a fitted chain; the log-volatility density comes from the chain."""
    family = h_family or build_is_family(model, chain)
    params = chain_parameters(model, chain)

    def loglik(pt):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return observed_loglik(model, data, pt, family, R, rng).value

    return compute_dic(params, loglik)
