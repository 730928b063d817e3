"""Chain driver: initial values, per-model sweeps and bookkeeping."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Any, Callable

import numpy as np

from ..data import ChainOutput, CsvState, FsvState, SvState, VARData, impact_matrix, loadings_matrix
from ..priors import ConjugatePrior, EquationPrior
from ..stochastics import make_rng
from .csv import csv_h_mode, csv_sample_A_Sigma, csv_sample_h, csv_sample_kappa
from .fsv import fsv_sample_factors, fsv_sample_theta
from .sv import sample_equation_kappas, sv_sample_alpha, sv_sample_beta
from .volatility import ksc_sample_logvol, sample_ar1_mu, sample_ar1_phi, sample_ar1_sigma2

__all__ = ["MODELS", "RunConfig", "SamplerError", "run_chain", "initial_state", "sweep", "to_state", "free_kappas"]

MODELS = ("csv", "sv", "fsv")


class SamplerError(RuntimeError):
    """A Gibbs step failed; the message names the sweep and the step."""


@dataclass(frozen=True)
class RunConfig:
    model: str
    burn_in: int = 1000
    keep: int = 5000
    thin: int = 1
    seed: int = 0
    stream: int = 0
    p: int = 4
    r: int = 1
    prior_mode: str = "asymmetric"
    allow_weak_identification: bool = False

    def __post_init__(self) -> None:
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.burn_in < 0 or self.keep < 1 or self.thin < 1:
            raise ValueError("need burn_in >= 0, keep >= 1 and thin >= 1")
        if self.model == "fsv" and self.r < 0:
            raise ValueError("factor count must be non-negative")

    def check_dimensions(self, n: int) -> None:
        if self.model == "fsv" and self.r > (n - 1) / 2 and not self.allow_weak_identification:
            raise ValueError(
                f"factor count r={self.r} exceeds (n-1)/2 for n={n}; set allow_weak_identification to override"
            )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


# ---------------------------------------------------------------------------
# working state (mutable dict) and conversion to immutable records


def _ridge_coefficients(data: VARData) -> tuple[np.ndarray, np.ndarray]:
    X, Y = data.X, data.Y
    K = X.T @ X + 1e-2 * np.eye(data.k)
    A = np.linalg.solve(K, X.T @ Y)
    E = Y - X @ A
    return A, E


def initial_state(model: str, data: VARData, prior, r: int = 0) -> dict[str, Any]:
    """Deterministic starting point built from a lightly ridged least-squares fit."""
    T, n = data.T, data.n
    A, E = _ridge_coefficients(data)
    resid_var = np.maximum(E.var(axis=0), 1e-8)
    if model == "csv":
        kappa = prior.kappa_fixed if prior.kappa_fixed is not None else prior.hyper[0] / prior.hyper[1]
        Sigma = np.cov(E.T).reshape(n, n) + 1e-6 * np.eye(n)
        # a flat start can sit far in the proposal's tail, where every move is rejected
        h = csv_h_mode(data, A, Sigma, 0.9, 0.1)
        return {"A": A, "Sigma": Sigma, "h": h, "phi": 0.9, "sigma2": 0.1, "kappa": float(kappa)}
    kap = prior.initial_kappas()
    lv = np.log(resid_var)
    if model == "sv":
        return {
            "alpha": A.T.copy(),
            "beta": [np.zeros(i) for i in range(n)],
            "h": np.tile(lv[:, None], (1, T)),
            "mu": lv.copy(),
            "phi": np.full(n, 0.9),
            "sigma2": np.full(n, 0.1),
            **kap,
        }
    m = n + r
    return {
        "alpha": A.T.copy(),
        "l": [np.zeros(min(i, r)) for i in range(n)],
        "f": np.zeros((r, T)),
        "h": np.vstack([np.tile(lv[:, None], (1, T)), np.zeros((r, T))]),
        "mu": np.concatenate([lv, np.zeros(r)]),
        "phi": np.full(m, 0.9),
        "sigma2": np.full(m, 0.1),
        "kappa1": kap["kappa1"],
        "kappa2": kap["kappa2"],
    }


def to_state(model: str, st: dict[str, Any], *, strict: bool = True):
    if model == "csv":
        return CsvState(st["A"], st["Sigma"], st["h"], st["phi"], st["sigma2"], st["kappa"])
    if model == "sv":
        return SvState(
            st["alpha"], tuple(st["beta"]), st["h"], st["mu"], st["phi"], st["sigma2"],
            st["kappa1"], st["kappa2"], st["kappa3"],
        )
    return FsvState(
        st["alpha"], tuple(st["l"]), st["f"], st["h"], st["mu"], st["phi"], st["sigma2"],
        st["kappa1"], st["kappa2"], strict=strict,
    )


def from_state(model: str, state) -> dict[str, Any]:
    if model == "csv":
        return {nm: np.array(getattr(state, nm)) if nm in ("A", "Sigma", "h") else getattr(state, nm)
                for nm in ("A", "Sigma", "h", "phi", "sigma2", "kappa")}
    out = {nm: np.array(getattr(state, nm)) for nm in ("alpha", "h", "mu", "phi", "sigma2")}
    if model == "sv":
        out["beta"] = [np.array(b) for b in state.beta]
        out.update(kappa1=state.kappa1, kappa2=state.kappa2, kappa3=state.kappa3)
    else:
        out["l"] = [np.array(b) for b in state.l]
        out["f"] = np.array(state.f)
        out.update(kappa1=state.kappa1, kappa2=state.kappa2)
    return out


# ---------------------------------------------------------------------------
# sweeps


class _Tally:
    def __init__(self) -> None:
        self.counts: dict[str, list[int]] = {}
        self.step = ""

    def record(self, name: str, accepted: bool) -> None:
        c = self.counts.setdefault(name, [0, 0])
        c[0] += int(accepted)
        c[1] += 1


def _sweep_csv(rng, data: VARData, prior: ConjugatePrior, st: dict, tally: _Tally) -> None:
    vol = prior.vol
    tally.step = "A_Sigma"
    st["A"], st["Sigma"] = csv_sample_A_Sigma(rng, data, st["h"], st["kappa"], prior)
    tally.step = "h"
    st["h"], acc = csv_sample_h(rng, data, st["A"], st["Sigma"], st["phi"], st["sigma2"], st["h"])
    tally.record("h", acc)
    tally.step = "phi"
    st["phi"], acc = sample_ar1_phi(rng, st["h"], 0.0, st["sigma2"], st["phi"], vol)
    tally.record("phi", acc)
    tally.step = "sigma2"
    st["sigma2"] = sample_ar1_sigma2(rng, st["h"], 0.0, st["phi"], vol)
    if prior.kappa_fixed is None:
        tally.step = "kappa"
        st["kappa"] = csv_sample_kappa(rng, st["A"], st["Sigma"], prior)


def _update_ar_params(rng, st: dict, prior: EquationPrior, tally: _Tally, order: tuple[str, ...]) -> None:
    for name in order:
        tally.step = name
        for j in range(st["h"].shape[0]):
            vol = prior.volatility_prior(j)
            if name == "mu":
                st["mu"][j] = sample_ar1_mu(rng, st["h"][j], st["phi"][j], st["sigma2"][j], vol)
            elif name == "phi":
                st["phi"][j], acc = sample_ar1_phi(rng, st["h"][j], st["mu"][j], st["sigma2"][j], st["phi"][j], vol)
                tally.record("phi", acc)
            else:
                st["sigma2"][j] = sample_ar1_sigma2(rng, st["h"][j], st["mu"][j], st["phi"][j], vol)


def _sweep_sv(rng, data: VARData, prior: EquationPrior, st: dict, tally: _Tally) -> None:
    n = data.n
    tally.step = "alpha"
    V_alpha = [prior.V_alpha(i, st["kappa1"], st["kappa2"]) for i in range(n)]
    B0 = impact_matrix(st["beta"], n)
    st["alpha"] = sv_sample_alpha(rng, data, st["alpha"], B0, st["h"], V_alpha)
    tally.step = "beta"
    eps = data.Y - data.X @ st["alpha"].T
    V_beta = [prior.V_beta(i, st["kappa3"]) if i else np.empty(0) for i in range(n)]
    st["beta"] = sv_sample_beta(rng, eps, st["h"], V_beta)
    tally.step = "h"
    U = eps @ impact_matrix(st["beta"], n).T
    h = st["h"].copy()
    for i in range(n):
        h[i] = ksc_sample_logvol(rng, U[:, i], h[i], st["mu"][i], st["phi"][i], st["sigma2"][i])
    st["h"] = h
    _update_ar_params(rng, st, prior, tally, ("mu", "phi", "sigma2"))
    tally.step = "kappa"
    st.update(sample_equation_kappas(rng, st["alpha"], prior, _kappas(st), beta=st["beta"]))


def _kappas(st: dict) -> dict[str, float]:
    return {nm: st[nm] for nm in ("kappa1", "kappa2", "kappa3") if nm in st}


def _sweep_fsv(rng, data: VARData, prior: EquationPrior, st: dict, tally: _Tally) -> None:
    n = data.n
    r = st["f"].shape[0]
    L = loadings_matrix(st["l"], n, r)
    tally.step = "factors"
    eps = data.Y - data.X @ st["alpha"].T
    st["f"] = fsv_sample_factors(rng, eps, L, st["h"])
    tally.step = "alpha_l"
    V_alpha = [prior.V_alpha(i, st["kappa1"], st["kappa2"]) for i in range(n)]
    st["alpha"], st["l"] = fsv_sample_theta(rng, data, st["f"], st["h"], V_alpha, prior.V_l)
    L = loadings_matrix(st["l"], n, r)
    tally.step = "h"
    U = data.Y - data.X @ st["alpha"].T - st["f"].T @ L.T
    h = st["h"].copy()
    for j in range(n + r):
        series = U[:, j] if j < n else st["f"][j - n]
        h[j] = ksc_sample_logvol(rng, series, h[j], st["mu"][j], st["phi"][j], st["sigma2"][j])
    st["h"] = h
    _update_ar_params(rng, st, prior, tally, ("sigma2", "mu", "phi"))
    tally.step = "kappa"
    st.update(sample_equation_kappas(rng, st["alpha"], prior, _kappas(st)))


def free_kappas(model: str, prior) -> tuple[str, ...]:
    if model == "csv":
        return ("kappa",) if prior.kappa_fixed is None else ()
    return prior.free_kappas(model)


_SWEEPS: dict[str, Callable] = {"csv": _sweep_csv, "sv": _sweep_sv, "fsv": _sweep_fsv}


def sweep(model: str, rng: np.random.Generator, data: VARData, prior, st: dict, tally: _Tally | None = None) -> dict:
    """Run one full sweep in place on the working state ``st`` and return it."""
    _SWEEPS[model](rng, data, prior, st, tally if tally is not None else _Tally())
    return st


def run_chain(
    model: str,
    data: VARData,
    prior,
    config: RunConfig,
    *,
    init: dict[str, Any] | None = None,
    rng: np.random.Generator | None = None,
) -> ChainOutput:
    if model != config.model:
        raise ValueError(f"model {model!r} does not match config model {config.model!r}")
    config.check_dimensions(data.n)
    if model == "csv" and not isinstance(prior, ConjugatePrior):
        raise TypeError("the common-volatility model needs a ConjugatePrior")
    if model in ("sv", "fsv") and not isinstance(prior, EquationPrior):
        raise TypeError(f"model {model!r} needs an EquationPrior")
    rng = rng if rng is not None else make_rng(config.seed, config.stream)
    r = config.r if model == "fsv" else 0
    st = initial_state(model, data, prior, r) if init is None else {k: (v.copy() if hasattr(v, "copy") else v) for k, v in init.items()}
    tally = _Tally()
    draws = []
    total = config.burn_in + config.keep * config.thin
    t0 = time.perf_counter()
    strict = not config.allow_weak_identification
    for s in range(total):
        try:
            _SWEEPS[model](rng, data, prior, st, tally)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            raise SamplerError(f"{model} sweep {s}, step {tally.step!r}: {exc}") from exc
        if s >= config.burn_in and (s - config.burn_in + 1) % config.thin == 0:
            draws.append(to_state(model, st, strict=strict))
    elapsed = time.perf_counter() - t0
    return ChainOutput(
        model=model,
        draws=tuple(draws),
        acceptance_counts={k: (v[0], v[1]) for k, v in tally.counts.items()},
        config=config,
        timings={"sampling_seconds": elapsed, "seconds_per_sweep": elapsed / max(total, 1)},
        metadata={"n": data.n, "T": data.T, "p": data.p, "r": r, "free_kappas": free_kappas(model, prior)},
    )
