"""Hierarchical Minnesota priors and the GIG conditionals of their shrinkage scales.

Coefficient positions follow the design layout: position 0 is the intercept
and position ``1 + (l - 1) n + j`` is lag ``l`` of variable ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

__all__ = [
    "PRIOR_MODES",
    "VolatilityPrior",
    "ConjugatePrior",
    "EquationPrior",
    "conjugate_V_A",
    "equation_V_alpha",
    "impact_V_beta",
    "kappa_gig_params",
    "lag_structure",
]

PRIOR_MODES = ("asymmetric", "symmetric", "subjective")
SUBJECTIVE_KAPPAS = {"kappa1": 0.04, "kappa2": 0.0016}
DEFAULT_HYPER = {
    "kappa": (1.0, 1.0 / 0.04),
    "kappa1": (1.0, 1.0 / 0.04),
    "kappa2": (1.0, 1.0 / 0.0016),
    "kappa3": (1.0, 1.0),
}


def _positive(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(x > 0) or not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be strictly positive and finite")
    return x


def lag_structure(n: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Lag index and variable index of every non-intercept coefficient position."""
    lags = np.repeat(np.arange(1, p + 1), n)
    variables = np.tile(np.arange(n), p)
    return lags, variables


def conjugate_V_A(kappa: float, s2: np.ndarray, p: int, n: int | None = None, *, intercept_var: float = 100.0) -> np.ndarray:
    """Diagonal of the coefficient prior covariance under the Kronecker prior."""
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    s2 = _positive(s2, "s2")
    n = s2.size if n is None else n
    if s2.size != n:
        raise ValueError(f"s2 has {s2.size} entries, expected {n}")
    lags, var = lag_structure(n, p)
    return np.concatenate([[intercept_var], kappa / (lags**2 * s2[var])])


def equation_V_alpha(i: int, kappa1: float, kappa2: float, s2: np.ndarray, p: int, *, intercept_var: float = 100.0) -> np.ndarray:
    """Prior variances of the coefficients of equation ``i`` (0-based)."""
    if not (kappa1 > 0 and kappa2 > 0):
        raise ValueError("kappa1 and kappa2 must be positive")
    s2 = _positive(s2, "s2")
    lags, var = lag_structure(s2.size, p)
    own = var == i
    v = np.where(own, kappa1 / lags**2, kappa2 * s2[i] / (lags**2 * s2[var]))
    return np.concatenate([[intercept_var * s2[i]], v])


def impact_V_beta(i: int, kappa3: float, s2: np.ndarray) -> np.ndarray:
    """Prior variances of the free impact elements of row ``i`` (0-based, length i)."""
    if not kappa3 > 0:
        raise ValueError("kappa3 must be positive")
    s2 = _positive(s2, "s2")
    return kappa3 * s2[i] / s2[:i]


_GROUP_COUNTS = {
    "own": lambda n, p: n * p,
    "other": lambda n, p: (n - 1) * n * p,
    "impact": lambda n, p: n * (n - 1) // 2,
    "symmetric": lambda n, p: n * n * p,
    "conjugate": lambda n, p: n * n * p,
}


def kappa_gig_params(
    group: str,
    coeffs: np.ndarray,
    prior_means: np.ndarray | float,
    constants: np.ndarray,
    hyper: tuple[float, float],
    *,
    n: int,
    p: int,
    Sigma: np.ndarray | None = None,
) -> tuple[float, float, float]:
    """Order and parameters (p, a, b) of the GIG conditional of a shrinkage scale.

    For ``group="conjugate"`` the coefficients are the full k x n matrix and
    ``constants`` covers the k - 1 lag positions; ``Sigma`` is required.
    Otherwise coefficients and constants are aligned flat vectors over the
    group's positions, whose count must match the group size.
    """
    if group not in _GROUP_COUNTS:
        raise ValueError(f"unknown shrinkage group {group!r}")
    c1, c2 = hyper
    m = _GROUP_COUNTS[group](n, p)
    if m == 0:
        raise ValueError(f"shrinkage group {group!r} is empty for n={n}, p={p}")
    C = _positive(constants, "constants")
    if group == "conjugate":
        if Sigma is None:
            raise ValueError("conjugate group needs Sigma")
        D = np.asarray(coeffs, dtype=float) - np.asarray(prior_means, dtype=float)
        D = D[1:]
        if D.shape[0] != C.size:
            raise ValueError("constants must cover every lag position")
        W = np.linalg.solve(Sigma, D.T)  # n x (k-1)
        q = np.einsum("ij,ji->i", D, W)
        b = float(np.sum(q / C))
    else:
        d = np.asarray(coeffs, dtype=float).reshape(-1) - np.asarray(prior_means, dtype=float).reshape(-1)
        if d.size != m or C.size != m:
            raise ValueError(f"group {group!r} expects {m} coefficients, got {d.size} (constants {C.size})")
        b = float(np.sum(d * d / C))
    return c1 - m / 2.0, 2.0 * c2, b


@dataclass(frozen=True)
class VolatilityPrior:
    """Priors of one AR(1) log-volatility process."""

    mu0: float = 0.0
    V_mu: float = 10.0
    phi0: float = 0.97
    V_phi: float = 0.1**2
    nu: float = 5.0
    S: float = 0.4

    def __post_init__(self) -> None:
        if not (self.V_mu > 0 and self.V_phi > 0 and self.nu > 0 and self.S > 0):
            raise ValueError("volatility prior variances and inverse-gamma parameters must be positive")


@dataclass(frozen=True)
class ConjugatePrior:
    """Normal-inverse-Wishart prior with one shrinkage scale for the common-volatility model."""

    s2: np.ndarray
    p: int
    nu0: float
    S0: np.ndarray
    A0: np.ndarray
    hyper: tuple[float, float] = DEFAULT_HYPER["kappa"]
    kappa_fixed: float | None = None
    vol: VolatilityPrior = field(default_factory=VolatilityPrior)
    intercept_var: float = 100.0

    def __post_init__(self) -> None:
        s2 = _positive(self.s2, "s2")
        n = s2.size
        S0 = np.asarray(self.S0, dtype=float)
        A0 = np.asarray(self.A0, dtype=float)
        if S0.shape != (n, n):
            raise ValueError("S0 must be n x n")
        if A0.shape != (1 + n * self.p, n):
            raise ValueError("A0 must be k x n")
        if not self.nu0 > n - 1:
            raise ValueError(f"nu0 must exceed n - 1 = {n - 1}")
        np.linalg.cholesky(S0)
        if self.kappa_fixed is not None and not self.kappa_fixed > 0:
            raise ValueError("fixed kappa must be positive")
        object.__setattr__(self, "s2", s2)
        object.__setattr__(self, "S0", S0)
        object.__setattr__(self, "A0", A0)

    @classmethod
    def default(cls, s2: np.ndarray, p: int, **kw) -> "ConjugatePrior":
        s2 = _positive(s2, "s2")
        n = s2.size
        nu0 = kw.pop("nu0", n + 3.0)
        S0 = kw.pop("S0", np.diag(s2) * (nu0 - n - 1))
        A0 = kw.pop("A0", np.zeros((1 + n * p, n)))
        return cls(s2=s2, p=p, nu0=nu0, S0=S0, A0=A0, **kw)

    @property
    def n(self) -> int:
        return self.s2.size

    @property
    def k(self) -> int:
        return 1 + self.n * self.p

    def V_A(self, kappa: float) -> np.ndarray:
        return conjugate_V_A(kappa, self.s2, self.p, intercept_var=self.intercept_var)

    @property
    def lag_constants(self) -> np.ndarray:
        """V_A entries over the lag positions divided by kappa."""
        return conjugate_V_A(1.0, self.s2, self.p)[1:]


@dataclass(frozen=True)
class EquationPrior:
    """Equation-by-equation Minnesota prior shared by the Cholesky and factor models."""

    s2: np.ndarray
    p: int
    mode: str = "asymmetric"
    hyper: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_HYPER))
    fixed: Mapping[str, float] = field(default_factory=dict)
    V_l: float = 1.0
    vol: VolatilityPrior = field(default_factory=VolatilityPrior)
    factor_vol: VolatilityPrior | None = None
    intercept_var: float = 100.0

    def __post_init__(self) -> None:
        s2 = _positive(self.s2, "s2")
        if self.mode not in PRIOR_MODES:
            raise ValueError(f"unknown prior mode {self.mode!r}; expected one of {PRIOR_MODES}")
        hyper = dict(DEFAULT_HYPER)
        hyper.update(self.hyper)
        for name, (c1, c2) in hyper.items():
            if not (c1 > 0 and c2 > 0):
                raise ValueError(f"hyperprior for {name} must have positive shape and rate")
        fixed = dict(self.fixed)
        if self.mode == "subjective":
            for name, v in SUBJECTIVE_KAPPAS.items():
                fixed.setdefault(name, v)
        if self.mode == "symmetric" and ("kappa1" in fixed) != ("kappa2" in fixed):
            raise ValueError("symmetric mode ties kappa1 and kappa2; fix both or neither")
        if self.mode == "symmetric" and "kappa1" in fixed and fixed["kappa1"] != fixed["kappa2"]:
            raise ValueError("symmetric mode requires kappa1 == kappa2")
        for name, v in fixed.items():
            if name not in ("kappa1", "kappa2", "kappa3") or not v > 0:
                raise ValueError(f"invalid fixed shrinkage value {name}={v}")
        if not self.V_l > 0:
            raise ValueError("loading prior variance must be positive")
        object.__setattr__(self, "s2", s2)
        object.__setattr__(self, "hyper", hyper)
        object.__setattr__(self, "fixed", fixed)

    @property
    def n(self) -> int:
        return self.s2.size

    @property
    def k(self) -> int:
        return 1 + self.n * self.p

    def V_alpha(self, i: int, kappa1: float, kappa2: float) -> np.ndarray:
        if self.mode == "symmetric":
            kappa2 = kappa1
        return equation_V_alpha(i, kappa1, kappa2, self.s2, self.p, intercept_var=self.intercept_var)

    def V_beta(self, i: int, kappa3: float) -> np.ndarray:
        return impact_V_beta(i, kappa3, self.s2)

    def alpha_groups(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Own-lag mask and constants C over the lag positions of equation ``i``.

        The prior variance at a lag position is kappa times its constant.
        """
        lags, var = lag_structure(self.n, self.p)
        own = var == i
        C = np.where(own, 1.0 / lags**2, self.s2[i] / (lags**2 * self.s2[var]))
        return own, C

    def free_kappas(self, model: str) -> tuple[str, ...]:
        names = ("kappa1", "kappa2", "kappa3") if model == "sv" else ("kappa1", "kappa2")
        if self.mode == "symmetric":
            names = tuple(nm for nm in names if nm != "kappa2")
        return tuple(nm for nm in names if nm not in self.fixed)

    def initial_kappas(self) -> dict[str, float]:
        out = {nm: self.hyper[nm][0] / self.hyper[nm][1] for nm in ("kappa1", "kappa2", "kappa3")}
        out.update(self.fixed)
        if self.mode == "symmetric":
            out["kappa2"] = out["kappa1"]
        return out

    def volatility_prior(self, j: int) -> VolatilityPrior:
        """Prior of log-volatility series j; series j >= n belong to factors."""
        if j >= self.n and self.factor_vol is not None:
            return self.factor_vol
        return self.vol
