"""Simulated-data studies and recursive forecast scoring."""

from __future__ import annotations

import csv
import io
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .crossentropy import build_is_family
from .data import ChainOutput, Panel, VARData, VarState, ar4_residual_variances, build_var_data, impact_matrix, loadings_matrix
from .gibbs.chain import RunConfig, run_chain
from .gibbs.csv import var_posterior_draws
from .likelihoods import fsv_covariances, homoskedastic_var_log_ml
from .marginal import MLEstimate, is_log_ml
from .priors import ConjugatePrior, EquationPrior
from .stochastics import draw_inverse_wishart, make_rng

__all__ = [
    "DGP_MODELS",
    "DgpConfig",
    "EstimatorSettings",
    "Candidate",
    "ComparisonConfig",
    "McResult",
    "companion_radius",
    "draw_var_coefficients",
    "simulate_dgp",
    "build_prior",
    "estimate_log_ml",
    "run_replication",
    "run_model_comparison",
    "factor_count_study",
    "predictive_log_likelihood",
    "homoskedastic_draws",
    "FailureBudgetExceeded",
    "MC_KAPPA",
]

DGP_MODELS = ("var", "csv", "sv", "fsv")
MC_KAPPA = 0.2**2


@dataclass(frozen=True)
class DgpConfig:
    model: str
    n: int = 5
    T: int = 200
    p: int = 2
    r: int = 3
    noisy: bool = False
    phi: float = 0.98
    sigma2: float = 0.1
    mu: float | None = None
    factor_mu: float = 0.0
    impact_sd: float = 0.5
    loading_sd: float = 1.0
    burn: int = 100
    max_redraws: int = 50
    allow_weak_identification: bool = False

    def __post_init__(self) -> None:
        if self.model not in DGP_MODELS:
            raise ValueError(f"unknown DGP model {self.model!r}; expected one of {DGP_MODELS}")
        if self.T < 1 or self.p < 1 or self.n < 1:
            raise ValueError("need n, T and p positive")
        if not abs(self.phi) < 1 or self.sigma2 < 0:
            raise ValueError("need |phi| < 1 and sigma2 >= 0")
        if self.model == "fsv" and self.r > (self.n - 1) / 2 and not self.allow_weak_identification:
            raise ValueError(f"r={self.r} exceeds (n-1)/2 for n={self.n}")

    @property
    def idio_mu(self) -> float:
        if self.mu is not None:
            return self.mu
        return 1.3 if self.noisy else -1.0


def companion_radius(A: np.ndarray, n: int, p: int) -> float:
    """Spectral radius of the companion matrix of the lag coefficients in A (k x n)."""
    top = A[1:].T  # n x np
    C = np.zeros((n * p, n * p))
    C[:n] = top
    if p > 1:
        C[n:, : n * (p - 1)] = np.eye(n * (p - 1))
    return float(np.max(np.abs(np.linalg.eigvals(C))))


def draw_var_coefficients(rng: np.random.Generator, n: int, p: int, *, max_redraws: int = 50) -> tuple[np.ndarray, int]:
    """Draw a stable k x n coefficient matrix; returns it with the number of rejected draws."""
    for attempt in range(max_redraws):
        A = np.zeros((1 + n * p, n))
        A[0] = rng.uniform(-10.0, 10.0, n)
        A1 = rng.uniform(-0.2, 0.2, (n, n))
        A1[np.diag_indices(n)] = rng.uniform(-0.2, 0.4, n)
        A[1 : 1 + n] = A1.T
        for lag in range(2, p + 1):
            A[1 + (lag - 1) * n : 1 + lag * n] = rng.normal(0.0, 0.05, (n, n)).T
        if companion_radius(A, n, p) < 0.999:
            return A, attempt
    raise RuntimeError(f"{max_redraws} consecutive unstable coefficient draws")


def _ar1_paths(rng: np.random.Generator, mu: np.ndarray, phi: float, sigma2: float, length: int) -> np.ndarray:
    m = mu.size
    h = np.empty((m, length))
    sd = np.sqrt(sigma2)
    h[:, 0] = mu + sd / np.sqrt(1.0 - phi * phi) * rng.standard_normal(m)
    z = rng.standard_normal((m, length))
    for t in range(1, length):
        h[:, t] = mu + phi * (h[:, t - 1] - mu) + sd * z[:, t]
    return h


def simulate_dgp(rng: np.random.Generator, config: DgpConfig) -> tuple[Panel, dict[str, Any]]:
    """Simulate parameters, then a panel of T + p rows (presample first)."""
    n, p, T, r = config.n, config.p, config.T, config.r
    A, redraws = draw_var_coefficients(rng, n, p, max_redraws=config.max_redraws)
    total = config.burn + p + T
    truth: dict[str, Any] = {"A": A, "redraws": redraws, "model": config.model}
    Z = rng.standard_normal((total, n))
    if config.model in ("var", "csv"):
        scale = 10.0 if config.noisy else 1.0
        S = scale * (0.7 * np.eye(n) + 0.3 * np.ones((n, n)))
        Sigma = draw_inverse_wishart(rng, n + 5, S)
        truth["Sigma"] = Sigma
        eps = Z @ np.linalg.cholesky(Sigma).T
        if config.model == "csv":
            h = _ar1_paths(rng, np.zeros(1), config.phi, config.sigma2, total)[0]
            eps *= np.exp(0.5 * h)[:, None]
            truth.update(h=h[-T:], phi=config.phi, sigma2=config.sigma2)
    elif config.model == "sv":
        beta = [rng.normal(0.0, config.impact_sd, i) for i in range(n)]
        B0 = impact_matrix(beta, n)
        h = _ar1_paths(rng, np.full(n, config.idio_mu), config.phi, config.sigma2, total)
        U = Z * np.exp(0.5 * h.T)
        eps = np.linalg.solve(B0, U.T).T
        truth.update(beta=beta, B0=B0, h=h[:, -T:], mu=np.full(n, config.idio_mu))
    else:
        l = [rng.normal(0.0, config.loading_sd, min(i, r)) for i in range(n)]
        L = loadings_matrix(l, n, r)
        mu = np.concatenate([np.full(n, config.idio_mu), np.full(r, config.factor_mu)])
        h = _ar1_paths(rng, mu, config.phi, config.sigma2, total)
        f = rng.standard_normal((total, r)) * np.exp(0.5 * h[n:].T)
        eps = f @ L.T + Z * np.exp(0.5 * h[:n].T)
        truth.update(l=l, L=L, h=h[:, -T:], f=f[-T:].T, mu=mu)
    truth.setdefault("phi", config.phi)
    truth.setdefault("sigma2", config.sigma2)

    intercept, lagc = A[0], A[1:]
    Ilag = np.eye(n) - sum(lagc[(j) * n : (j + 1) * n].T for j in range(p))
    ybar = np.linalg.solve(Ilag, intercept)
    y = np.empty((total, n))
    y[:p] = ybar
    for t in range(p, total):
        x = np.concatenate([[1.0], y[t - p : t][::-1].reshape(-1)])
        y[t] = x @ A + eps[t]
    return Panel.from_array(y[-(T + p) :]), truth


# ---------------------------------------------------------------------------
# estimation pipeline


@dataclass(frozen=True)
class EstimatorSettings:
    burn_in: int = 1000
    keep: int = 5000
    R: int = 5000
    thin: int = 1
    p: int = 2
    fixed_kappa: float | None = MC_KAPPA
    impact_kappa: float | None = 1.0
    prior_mode: str = "asymmetric"
    allow_weak_identification: bool = False


@dataclass(frozen=True)
class Candidate:
    label: str
    model: str  # var | csv | sv | fsv
    r: int = 0


def build_prior(model: str, panel: Panel | np.ndarray, settings: EstimatorSettings):
    s2 = ar4_residual_variances(panel)
    if model in ("var", "csv"):
        return ConjugatePrior.default(s2, settings.p, kappa_fixed=settings.fixed_kappa)
    fixed: dict[str, float] = {}
    if settings.fixed_kappa is not None:
        fixed.update(kappa1=settings.fixed_kappa, kappa2=settings.fixed_kappa)
    if settings.impact_kappa is not None and model == "sv":
        fixed["kappa3"] = settings.impact_kappa
    mode = settings.prior_mode
    if mode == "asymmetric" and settings.fixed_kappa is not None:
        mode = "symmetric"
    return EquationPrior(s2, settings.p, mode=mode, fixed=fixed)


def estimate_log_ml(
    candidate: Candidate,
    panel: Panel | np.ndarray,
    settings: EstimatorSettings,
    *,
    seed: int,
    stream: int,
) -> tuple[MLEstimate, ChainOutput | None]:
    data = build_var_data(panel, settings.p)
    prior = build_prior(candidate.model, panel, settings)
    if candidate.model == "var":
        if prior.kappa_fixed is None:
            raise ValueError("the homoskedastic benchmark needs a fixed kappa")
        return MLEstimate(homoskedastic_var_log_ml(data, prior, prior.kappa_fixed), 0.0, 0, 0.0, "analytic"), None
    cfg = RunConfig(
        candidate.model,
        burn_in=settings.burn_in,
        keep=settings.keep,
        thin=settings.thin,
        seed=seed,
        stream=stream,
        p=settings.p,
        r=candidate.r,
        prior_mode=prior.mode if hasattr(prior, "mode") else "conjugate",
        allow_weak_identification=settings.allow_weak_identification,
    )
    chain = run_chain(candidate.model, data, prior, cfg)
    family = build_is_family(candidate.model, chain)
    est = is_log_ml(candidate.model, data, prior, family, settings.R, make_rng(seed, stream + 500_000))
    return est, chain


@dataclass(frozen=True)
class ComparisonConfig:
    dgp: DgpConfig
    candidates: tuple[Candidate, ...]
    true_label: str
    replications: int = 20
    settings: EstimatorSettings = field(default_factory=EstimatorSettings)
    seed: int = 2024
    n_jobs: int = 1
    failure_budget: float = 0.1


@dataclass
class McResult:
    true_label: str
    rows: list[dict[str, Any]]
    failures: list[dict[str, Any]]
    labels: tuple[str, ...]

    def table(self) -> dict[int, dict[str, float]]:
        out: dict[int, dict[str, float]] = {}
        for row in self.rows:
            out.setdefault(row["replication"], {})[row["candidate"]] = row["log_ml"]
        return out

    def complete_replications(self) -> dict[int, dict[str, float]]:
        return {r: v for r, v in self.table().items() if all(lbl in v for lbl in self.labels)}

    def selection_frequency(self) -> float:
        reps = self.complete_replications()
        if not reps:
            return float("nan")
        wins = sum(max(v, key=v.get) == self.true_label for v in reps.values())
        return wins / len(reps)

    def pairwise_win_rate(self, other: str) -> float:
        reps = self.complete_replications()
        return float(np.mean([v[self.true_label] > v[other] for v in reps.values()]))

    def differences(self, label: str) -> np.ndarray:
        """Candidate minus true log marginal likelihood, one entry per replication."""
        reps = self.complete_replications()
        return np.array([v[label] - v[self.true_label] for _, v in sorted(reps.items())])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["replication", "candidate", "log_ml", "nse", "diff_vs_true", "seed"])
        w.writeheader()
        table = self.table()
        for row in sorted(self.rows, key=lambda r: (r["replication"], r["candidate"])):
            true = table[row["replication"]].get(self.true_label, np.nan)
            w.writerow({
                "replication": row["replication"],
                "candidate": row["candidate"],
                "log_ml": repr(float(row["log_ml"])),
                "nse": repr(float(row["nse"])),
                "diff_vs_true": repr(float(row["log_ml"] - true)),
                "seed": row["seed"],
            })
        return buf.getvalue()

    def histogram(self, label: str, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
        return np.histogram(self.differences(label), bins=bins)


def run_replication(config: ComparisonConfig, rep: int) -> tuple[list[dict[str, Any]], list[dict[str, Any]]]:
    """Simulate one dataset and estimate every candidate; failures are returned, not raised."""
    base = rep * 1000
    rows, fails = [], []
    try:
        panel, _ = simulate_dgp(make_rng(config.seed, base), config.dgp)
    except Exception as exc:  # noqa: BLE001 - recorded against the budget
        return [], [{"replication": rep, "candidate": "dgp", "error": repr(exc)}]
    for j, cand in enumerate(config.candidates):
        t0 = time.perf_counter()
        try:
            est, _ = estimate_log_ml(cand, panel, config.settings, seed=config.seed, stream=base + 1 + j)
        except Exception as exc:  # noqa: BLE001
            fails.append({"replication": rep, "candidate": cand.label, "error": repr(exc), "trace": traceback.format_exc()})
            continue
        rows.append({
            "replication": rep,
            "candidate": cand.label,
            "log_ml": est.log_ml,
            "nse": est.nse,
            "ess": est.ess,
            "seed": config.seed,
            "seconds": time.perf_counter() - t0,
        })
    return rows, fails


class FailureBudgetExceeded(RuntimeError):
    def __init__(self, result: McResult):
        super().__init__(f"{len(result.failures)} failed fits exceed the failure budget")
        self.result = result


def run_model_comparison(config: ComparisonConfig) -> McResult:
    reps = range(config.replications)
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            outputs = list(pool.map(run_replication, [config] * config.replications, reps))
    else:
        outputs = [run_replication(config, rep) for rep in reps]
    rows = [r for out, _ in outputs for r in out]
    fails = [f for _, out in outputs for f in out]
    rows.sort(key=lambda r: (r["replication"], r["candidate"]))
    result = McResult(config.true_label, rows, fails, tuple(c.label for c in config.candidates))
    failed_reps = {f["replication"] for f in fails}
    if len(failed_reps) > config.failure_budget * config.replications:
        raise FailureBudgetExceeded(result)
    return result


def factor_count_study(
    dgp: DgpConfig,
    *,
    candidates: Sequence[int] = (2, 3, 4),
    replications: int = 10,
    settings: EstimatorSettings | None = None,
    seed: int = 2024,
    n_jobs: int = 1,
) -> McResult:
    settings = settings or EstimatorSettings()
    weak = any(r > (dgp.n - 1) / 2 for r in candidates)
    if weak and not settings.allow_weak_identification:
        raise ValueError("a candidate factor count exceeds (n-1)/2; enable allow_weak_identification")
    cands = tuple(Candidate(f"fsv_r{r}", "fsv", r) for r in candidates)
    cfg = ComparisonConfig(dgp, cands, f"fsv_r{dgp.r}", replications, settings, seed, n_jobs)
    return run_model_comparison(cfg)


# ---------------------------------------------------------------------------
# predictive likelihoods


def _mvn_logpdf(y: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Batched Gaussian log-density; leading axes of mean/cov are draws."""
    C = np.linalg.cholesky(cov)
    z = np.linalg.solve(C, (y - mean)[..., None])[..., 0]
    n = y.shape[-1]
    return -0.5 * n * np.log(2 * np.pi) - np.sum(np.log(np.diagonal(C, axis1=-2, axis2=-1)), axis=-1) - 0.5 * np.sum(z * z, axis=-1)


def _next_h(rng, h_last, mu, phi, sigma2):
    return mu + phi * (h_last - mu) + np.sqrt(sigma2) * rng.standard_normal(np.shape(h_last))


def _draw_covariance(model: str, d, h: np.ndarray) -> np.ndarray:
    if model == "var":
        return d.Sigma
    if model == "csv":
        return np.exp(h) * d.Sigma
    if model == "sv":
        Binv = np.linalg.inv(d.B0)
        return (Binv * np.exp(h)) @ Binv.T
    return fsv_covariances(d.L, h[:, None])[0]


def predictive_log_likelihood(
    draws: ChainOutput | Sequence,
    data: VARData,
    origin: int,
    horizon: int,
    rng: np.random.Generator,
    *,
    model: str | None = None,
    jitter: float = 1e-10,
) -> float:
    """log p(y_{origin + horizon - 1} | y_{<origin}) averaged over posterior draws.

    ``data`` is the full sample; the draws must come from a fit on rows before
    ``origin``. For horizon > 1, intermediate observations and volatilities are
    simulated once per draw and the final step is evaluated in closed form.
    """
    model = model or draws.model
    states = draws.draws if isinstance(draws, ChainOutput) else list(draws)
    if horizon < 1 or origin + horizon - 1 >= data.T:
        raise ValueError("origin + horizon exceeds the available sample")
    n, p = data.n, data.p
    target = data.Y[origin + horizon - 1]
    # lags available at the origin
    x0 = data.X[origin].copy()
    logs = np.empty(len(states))
    for m, d in enumerate(states):
        A = d.A if model in ("var", "csv") else d.alpha.T
        h = d.h[..., -1] if model != "var" else None
        x = x0.copy()
        for step in range(horizon):
            if model == "csv":
                h = _next_h(rng, h, 0.0, d.phi, d.sigma2)
            elif model in ("sv", "fsv"):
                h = _next_h(rng, h, d.mu, d.phi, d.sigma2)
            cov = _draw_covariance(model, d, h) + jitter * np.eye(n)
            mean = x @ A
            if step == horizon - 1:
                logs[m] = _mvn_logpdf(target, mean, cov)
            else:
                y_sim = mean + np.linalg.cholesky(cov) @ rng.standard_normal(n)
                x = np.concatenate([[1.0], y_sim, x[1 : 1 + n * (p - 1)]])
    top = np.max(logs)
    if not np.isfinite(top):
        warnings.warn("predictive density underflowed for every draw", RuntimeWarning, stacklevel=2)
        return -np.inf
    return float(top + np.log(np.mean(np.exp(logs - top))))


def homoskedastic_draws(rng: np.random.Generator, data: VARData, prior: ConjugatePrior, kappa: float, size: int):
    return [VarState(A, S) for A, S in var_posterior_draws(rng, data, prior, kappa, size)]
