"""Importance densities fitted to posterior draws by maximum likelihood.

Each block of the family is fitted on its own, so the joint density is a
product of independent blocks. Log-volatility paths get a Gaussian AR(1)
density with period-specific intercepts and variances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy import signal, special

from .data import ChainOutput

__all__ = [
    "Ar1GaussianFamily",
    "GammaBlock",
    "NormalBlock",
    "MvNormalBlock",
    "ISFamily",
    "DegenerateDrawsError",
    "fit_ar1_family",
    "ar1_concentrated_loglik",
    "fit_gamma_ml",
    "fit_normal",
    "fit_mvnormal",
    "build_is_family",
]

LOG_2PI = np.log(2.0 * np.pi)
RHO_BOUND = 0.999


class DegenerateDrawsError(ValueError):
    """Raised when draws carry no spread for a block to be fitted."""


@dataclass(frozen=True)
class Ar1GaussianFamily:
    """h_1 = a_1 + e_1 and h_t = rho h_{t-1} + a_t + e_t with e_t ~ N(0, b_t)."""

    rho: float
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("a and b must be vectors of equal length")
        if not np.all(b > 0):
            raise ValueError("variances b must be strictly positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def T(self) -> int:
        return self.a.size

    @property
    def n_params(self) -> int:
        return 2 * self.T + 1

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        eta = self.a + np.sqrt(self.b) * rng.standard_normal((size, self.T))
        return signal.lfilter([1.0], [1.0, -self.rho], eta, axis=1)

    def logpdf(self, h: np.ndarray) -> np.ndarray | float:
        h = np.asarray(h, dtype=float)
        u = h.copy()
        u[..., 1:] -= self.rho * h[..., :-1]
        z = u - self.a
        out = -0.5 * np.sum(LOG_2PI + np.log(self.b) + z * z / self.b, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def mean(self) -> np.ndarray:
        return signal.lfilter([1.0], [1.0, -self.rho], self.a)

    def precision(self) -> np.ndarray:
        H = np.eye(self.T) - self.rho * np.eye(self.T, k=-1)
        return H.T @ (H / self.b[:, None])

    def to_dict(self) -> dict[str, Any]:
        return {"type": "ar1", "rho": self.rho, "a": self.a.tolist(), "b": self.b.tolist()}


@dataclass(frozen=True)
class GammaBlock:
    shape: float
    rate: float

    def __post_init__(self) -> None:
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("gamma shape and rate must be positive")

    n_params = 2

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.shape * np.log(self.rate) - special.gammaln(self.shape) + (self.shape - 1) * np.log(x) - self.rate * x
        return np.where(x > 0, out, -np.inf)

    def to_dict(self) -> dict[str, Any]:
        return {"type": "gamma", "shape": self.shape, "rate": self.rate}


@dataclass(frozen=True)
class NormalBlock:
    mean: float
    precision: float

    def __post_init__(self) -> None:
        if not self.precision > 0:
            raise ValueError("precision must be positive")

    n_params = 2

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.mean + rng.standard_normal(size) / np.sqrt(self.precision)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        z = np.asarray(x, dtype=float) - self.mean
        return 0.5 * (np.log(self.precision) - LOG_2PI) - 0.5 * self.precision * z * z

    def to_dict(self) -> dict[str, Any]:
        return {"type": "normal", "mean": self.mean, "precision": self.precision}


@dataclass(frozen=True)
class MvNormalBlock:
    """Gaussian with full or diagonal covariance."""

    mean: np.ndarray
    cov: np.ndarray
    diagonal: bool = False

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        if self.diagonal:
            cov = np.diag(np.diag(cov)) if cov.ndim == 2 else np.diag(cov)
        cov = np.atleast_2d(cov)
        chol = np.linalg.cholesky(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def n_params(self) -> int:
        d = self.dim
        return 2 * d if self.diagonal else d + d * (d + 1) // 2

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.mean + rng.standard_normal((size, self.dim)) @ self._chol.T

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = np.linalg.solve(self._chol, (x - self.mean).T) if x.ndim > 1 else np.linalg.solve(self._chol, x - self.mean)
        logdet = np.sum(np.log(np.diag(self._chol)))
        return -0.5 * self.dim * LOG_2PI - logdet - 0.5 * np.sum(z * z, axis=0)

    def to_dict(self) -> dict[str, Any]:
        return {"type": "mvnormal", "mean": self.mean.tolist(), "cov": self.cov.tolist(), "diagonal": self.diagonal}


# ---------------------------------------------------------------------------
# fitting


def _ar1_moments(draws: np.ndarray, rho: float, literal: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    u = draws.copy()
    u[:, 1:] -= rho * draws[:, :-1]
    a = u.mean(axis=0)
    resid = (draws - a) if literal else (u - a)
    b = np.mean(resid * resid, axis=0)
    return a, b, np.mean((u - a) ** 2, axis=0)


def ar1_concentrated_loglik(draws: np.ndarray, rho: float, *, literal: bool = False) -> float:
    """Log-likelihood of the draws at rho with a and b at their fitted values."""
    draws = np.asarray(draws, dtype=float)
    M = draws.shape[0]
    a, b, s = _ar1_moments(draws, rho, literal)
    if np.any(b <= 0):
        return -np.inf
    return float(-0.5 * M * np.sum(LOG_2PI + np.log(b) + s / b))


def _golden_max(f, lo: float, hi: float, tol: float = 1e-6) -> tuple[float, float]:
    g = (np.sqrt(5.0) - 1.0) / 2.0
    x1, x2 = hi - g * (hi - lo), lo + g * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > tol:
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + g * (hi - lo)
            f2 = f(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - g * (hi - lo)
            f1 = f(x1)
    x = 0.5 * (lo + hi)
    return x, f(x)


def fit_ar1_family(
    draws: np.ndarray,
    *,
    rho: float | None = None,
    literal: bool = False,
    restarts: int = 3,
) -> Ar1GaussianFamily:
    """Fit the AR(1)-Gaussian density to M x T draws of a log-volatility path.

    The intercepts and variances are profiled out, leaving a 1-D search over
    rho split into ``restarts`` equal sub-intervals of [-0.999, 0.999].
    ``literal=True`` measures the variances around the untransformed draws.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[0] < 2 or draws.shape[1] < 1:
        raise ValueError(f"need an M x T array with M >= 2, got shape {draws.shape}")
    if rho is None:
        edges = np.linspace(-RHO_BOUND, RHO_BOUND, restarts + 1)
        best = (-np.inf, 0.0)
        for lo, hi in zip(edges[:-1], edges[1:]):
            x, fx = _golden_max(lambda r: ar1_concentrated_loglik(draws, r, literal=literal), lo, hi)
            if fx > best[0]:
                best = (fx, x)
        rho = best[1]
    a, b, _ = _ar1_moments(draws, rho, literal)
    scale = np.maximum(np.mean(draws * draws, axis=0), 1.0)
    if np.any(b <= 1e-14 * scale):
        raise DegenerateDrawsError("log-volatility draws have zero spread at some period")
    return Ar1GaussianFamily(rho, a, b)


def fit_gamma_ml(draws: np.ndarray, *, tol: float = 1e-12, max_iter: int = 100) -> tuple[float, float]:
    """Maximum-likelihood (shape, rate) of a Gamma density."""
    x = np.asarray(draws, dtype=float).reshape(-1)
    if x.size < 2 or np.any(x <= 0):
        raise ValueError("gamma fit needs at least two strictly positive draws")
    xbar = x.mean()
    s = np.log(xbar) - np.mean(np.log(x))
    if not s > 1e-14:
        raise DegenerateDrawsError("gamma fit: draws have zero spread")
    shape = (3.0 - s + np.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    # Newton on log(shape): log(k) - digamma(k) = s
    for _ in range(max_iter):
        g = np.log(shape) - special.digamma(shape) - s
        dg = 1.0 / shape - special.polygamma(1, shape)
        step = g / (dg * shape)
        shape = shape * np.exp(-step)
        if abs(step) < tol:
            break
    return float(shape), float(shape / xbar)


def fit_normal(draws: np.ndarray) -> tuple[float, float]:
    """ML (mean, precision) with the population divisor."""
    x = np.asarray(draws, dtype=float).reshape(-1)
    v = x.var()
    if not v > 0:
        raise DegenerateDrawsError("normal fit: draws have zero spread")
    return float(x.mean()), float(1.0 / v)


def fit_mvnormal(draws: np.ndarray, *, full_max_dim: int = 10) -> MvNormalBlock:
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    d = x.shape[1]
    mean = x.mean(axis=0)
    z = x - mean
    cov = z.T @ z / x.shape[0]
    if np.any(np.diag(cov) <= 0):
        raise DegenerateDrawsError("multivariate normal fit: a coordinate has zero spread")
    return MvNormalBlock(mean, cov, diagonal=d > full_max_dim)


# ---------------------------------------------------------------------------
# model families


@dataclass(frozen=True)
class ISFamily:
    """Named independent blocks; each block maps to one parameter (group)."""

    model: str
    blocks: Mapping[str, Any] = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return int(sum(b.n_params for b in self.blocks.values()))

    def __getitem__(self, name: str):
        return self.blocks[name]

    def __contains__(self, name: str) -> bool:
        return name in self.blocks

    def sample(self, rng: np.random.Generator, size: int) -> dict[str, np.ndarray]:
        return {name: blk.sample(rng, size) for name, blk in self.blocks.items()}

    def logpdf(self, draws: Mapping[str, np.ndarray]) -> np.ndarray:
        return sum(np.asarray(blk.logpdf(draws[name])) for name, blk in self.blocks.items())

    def to_json(self) -> str:
        return json.dumps({"model": self.model, "blocks": {k: v.to_dict() for k, v in self.blocks.items()}})


_REQUIRED = {"csv": ("h", "phi"), "sv": ("h", "mu", "phi"), "fsv": ("h", "mu", "phi")}


def _free_kappas(chain: ChainOutput) -> tuple[str, ...]:
    if "free_kappas" in chain.metadata:
        return tuple(chain.metadata["free_kappas"])
    names = ("kappa",) if chain.model == "csv" else ("kappa1", "kappa2", "kappa3") if chain.model == "sv" else ("kappa1", "kappa2")
    return tuple(nm for nm in names if np.ptp(chain.stack(nm)) > 0)


def build_is_family(model: str, chain: ChainOutput, *, literal: bool = False, full_max_dim: int = 10) -> ISFamily:
    """Fit the block-separable importance density of ``model`` to a chain."""
    if chain.model != model:
        raise ValueError(f"chain was produced by {chain.model!r}, not {model!r}")
    if not chain.draws:
        raise ValueError("chain has no draws")
    first = chain.draws[0]
    for nm in _REQUIRED[model]:
        if not hasattr(first, nm):
            raise KeyError(f"chain draws lack the {nm!r} block")
    blocks: dict[str, Any] = {}
    if model == "csv":
        blocks["h"] = fit_ar1_family(chain.stack("h"), literal=literal)
        blocks["phi"] = NormalBlock(*fit_normal(chain.stack("phi")))
    else:
        H, mu, phi = chain.stack("h"), chain.stack("mu"), chain.stack("phi")
        n = first.alpha.shape[0]
        rows = first.beta if model == "sv" else first.l
        key = "beta" if model == "sv" else "l"
        for i in range(n):
            if rows[i].size:
                draws = np.stack([getattr(d, key)[i] for d in chain.draws])
                blocks[f"{key}{i}"] = fit_mvnormal(draws, full_max_dim=full_max_dim)
        for j in range(H.shape[1]):
            blocks[f"h{j}"] = fit_ar1_family(H[:, j], literal=literal)
            blocks[f"mu{j}"] = NormalBlock(*fit_normal(mu[:, j]))
            blocks[f"phi{j}"] = NormalBlock(*fit_normal(phi[:, j]))
    for nm in _free_kappas(chain):
        blocks[nm] = GammaBlock(*fit_gamma_ml(chain.stack(nm)))
    return ISFamily(model, blocks)
