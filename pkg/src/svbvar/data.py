"""Panels, lag construction and the per-model parameter records."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

__all__ = [
    "TRANSFORM_CODES",
    "Panel",
    "VARData",
    "VarState",
    "CsvState",
    "SvState",
    "FsvState",
    "ChainOutput",
    "transform_series",
    "build_var_data",
    "ar4_residual_variances",
    "loadings_matrix",
    "impact_matrix",
]

TRANSFORM_CODES = ("none", "dlog400", "d2log")
_DIFF_ORDER = {"none": 0, "dlog400": 1, "d2log": 2}


def _frozen(a: Any, *, ndim: int | None = None, name: str = "array") -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    if ndim is not None and out.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite values")
    out.setflags(write=False)
    return out


def transform_series(raw: Sequence[float] | np.ndarray, code: str) -> np.ndarray:
    """Apply one of the transform codes ``none``, ``dlog400`` or ``d2log``."""
    if code not in _DIFF_ORDER:
        raise ValueError(f"unknown transform code {code!r}; expected one of {TRANSFORM_CODES}")
    x = np.asarray(raw, dtype=float)
    if x.ndim != 1:
        raise ValueError("transform_series expects a 1-D series")
    order = _DIFF_ORDER[code]
    if x.size < order + 1:
        raise ValueError(f"{code} needs at least {order + 1} points, got {x.size}")
    if code == "none":
        return x.copy()
    bad = np.flatnonzero(~(x > 0))
    if bad.size:
        raise ValueError(f"log transform of non-positive value {x[bad[0]]} at index {bad[0]}")
    lx = np.log(x)
    if code == "dlog400":
        return 400.0 * np.diff(lx)
    return np.diff(lx, n=2)


@dataclass(frozen=True)
class Panel:
    values: np.ndarray
    names: tuple[str, ...]
    transform_codes: tuple[str, ...]
    frequency: str = "quarterly"
    dates: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        values = _frozen(self.values, ndim=2, name="panel values")
        names = tuple(str(n) for n in self.names)
        codes = tuple(self.transform_codes)
        if values.shape[1] != len(names):
            raise ValueError(f"panel has {values.shape[1]} columns but {len(names)} names")
        if len(codes) != len(names):
            raise ValueError(f"panel has {len(names)} names but {len(codes)} transform codes")
        for c in codes:
            if c not in _DIFF_ORDER:
                raise ValueError(f"unknown transform code {c!r}")
        if self.dates is not None and len(self.dates) != values.shape[0]:
            raise ValueError("dates length must match panel rows")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "transform_codes", codes)
        if self.dates is not None:
            object.__setattr__(self, "dates", tuple(str(d) for d in self.dates))

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_array(cls, values: np.ndarray, names: Sequence[str] | None = None, **kw) -> "Panel":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if names is None:
            names = [f"y{i + 1}" for i in range(values.shape[1])]
        return cls(values, tuple(names), ("none",) * values.shape[1], **kw)


@dataclass(frozen=True)
class VARData:
    """Response matrix Y (T x n) and design X (T x k) with rows (1, y_{t-1}', ..., y_{t-p}')."""

    Y: np.ndarray
    X: np.ndarray
    p: int

    def __post_init__(self) -> None:
        Y = _frozen(self.Y, ndim=2, name="Y")
        X = _frozen(self.X, ndim=2, name="X")
        T, n = Y.shape
        if X.shape != (T, 1 + n * self.p):
            raise ValueError(f"X must be {T} x {1 + n * self.p}, got {X.shape}")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    @property
    def n(self) -> int:
        return self.Y.shape[1]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    def subsample(self, stop: int, start: int = 0) -> "VARData":
        return VARData(self.Y[start:stop], self.X[start:stop], self.p)


def lag_design(values: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=float)
    rows, n = values.shape
    if p < 1:
        raise ValueError(f"lag order must be >= 1, got {p}")
    if rows <= p:
        raise ValueError(f"need more than p={p} rows to build lags, got {rows}")
    T = rows - p
    X = np.empty((T, 1 + n * p))
    X[:, 0] = 1.0
    for lag in range(1, p + 1):
        X[:, 1 + (lag - 1) * n : 1 + lag * n] = values[p - lag : rows - lag]
    return values[p:], X


def build_var_data(panel: Panel | np.ndarray, p: int) -> VARData:
    values = panel.values if isinstance(panel, Panel) else np.asarray(panel, dtype=float)
    Y, X = lag_design(values, p)
    return VARData(Y, X, p)


def ar4_residual_variances(panel: Panel | np.ndarray, *, lags: int = 4) -> np.ndarray:
    """Residual variance of an OLS AR(4) with intercept, per column.

    The divisor is the number of usable observations (maximum-likelihood
    scaling), not the degrees of freedom.
    """
    values = panel.values if isinstance(panel, Panel) else np.atleast_2d(np.asarray(panel, dtype=float))
    if values.ndim != 2:
        raise ValueError("expected a (rows, n) array")
    out = np.empty(values.shape[1])
    for j in range(values.shape[1]):
        y = values[:, j]
        if y.size <= lags + 2:
            raise ValueError(f"column {j} has {y.size} observations; need more than {lags + 2}")
        yy, Z = lag_design(y[:, None], lags)
        if np.linalg.matrix_rank(Z) < Z.shape[1]:
            raise np.linalg.LinAlgError(f"column {j}: AR({lags}) design is rank deficient (collinear lags)")
        coef, *_ = np.linalg.lstsq(Z, yy[:, 0], rcond=None)
        resid = yy[:, 0] - Z @ coef
        s2 = float(resid @ resid) / resid.size
        scale = float(np.var(yy[:, 0])) or 1.0
        if s2 <= 1e-20 * scale:
            warnings.warn(f"column {j}: AR({lags}) residual variance is numerically zero", RuntimeWarning, stacklevel=2)
            s2 = 0.0
        out[j] = s2
    return out


# ---------------------------------------------------------------------------
# parameter records


def _check_ar_params(phi: np.ndarray, sigma2: np.ndarray, where: str) -> None:
    if np.any(np.abs(phi) >= 1.0):
        raise ValueError(f"{where}: |phi| must be < 1, got {phi}")
    if np.any(sigma2 <= 0.0):
        raise ValueError(f"{where}: sigma2 must be positive, got {sigma2}")


def _check_spd(S: np.ndarray, name: str) -> None:
    if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} is not positive definite") from exc


def impact_matrix(beta: Sequence[np.ndarray], n: int) -> np.ndarray:
    """Unit lower-triangular matrix whose row i holds ``beta[i]`` left of the diagonal."""
    B0 = np.eye(n)
    for i in range(1, n):
        B0[i, :i] = beta[i]
    return B0


def loadings_matrix(l: Sequence[np.ndarray], n: int, r: int) -> np.ndarray:
    """n x r loading matrix, lower triangular with unit diagonal."""
    L = np.zeros((n, r))
    for i in range(n):
        if i < r:
            L[i, i] = 1.0
        m = min(i, r)
        if m:
            L[i, :m] = l[i]
    return L


@dataclass(frozen=True)
class VarState:
    """Homoskedastic VAR draw."""

    A: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self) -> None:
        A = _frozen(self.A, ndim=2, name="A")
        S = _frozen(self.Sigma, ndim=2, name="Sigma")
        if S.shape != (A.shape[1], A.shape[1]):
            raise ValueError("Sigma dimension must match columns of A")
        _check_spd(S, "Sigma")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Sigma", S)


@dataclass(frozen=True)
class CsvState:
    A: np.ndarray
    Sigma: np.ndarray
    h: np.ndarray
    phi: float
    sigma2: float
    kappa: float

    def __post_init__(self) -> None:
        A = _frozen(self.A, ndim=2, name="A")
        S = _frozen(self.Sigma, ndim=2, name="Sigma")
        h = _frozen(self.h, ndim=1, name="h")
        if S.shape != (A.shape[1], A.shape[1]):
            raise ValueError("Sigma dimension must match columns of A")
        _check_spd(S, "Sigma")
        _check_ar_params(np.asarray(self.phi), np.asarray(self.sigma2), "CsvState")
        if not self.kappa > 0:
            raise ValueError(f"CsvState: kappa must be positive, got {self.kappa}")
        for name, v in (("A", A), ("Sigma", S), ("h", h)):
            object.__setattr__(self, name, v)
        object.__setattr__(self, "phi", float(self.phi))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "kappa", float(self.kappa))


@dataclass(frozen=True)
class SvState:
    alpha: np.ndarray  # (n, k); row i is the coefficient vector of equation i
    beta: tuple[np.ndarray, ...]  # beta[i] has length i
    h: np.ndarray  # (n, T)
    mu: np.ndarray
    phi: np.ndarray
    sigma2: np.ndarray
    kappa1: float
    kappa2: float
    kappa3: float

    def __post_init__(self) -> None:
        alpha = _frozen(self.alpha, ndim=2, name="alpha")
        n = alpha.shape[0]
        if len(self.beta) != n:
            raise ValueError(f"need {n} impact rows, got {len(self.beta)}")
        beta = []
        for i, row in enumerate(self.beta):
            row = _frozen(np.asarray(row, dtype=float).reshape(-1), ndim=1, name=f"beta[{i}]")
            if row.size != i:
                raise ValueError(f"impact row {i} must have {i} free elements, got {row.size}")
            beta.append(row)
        h = _frozen(self.h, ndim=2, name="h")
        vecs = [_frozen(np.atleast_1d(getattr(self, nm)), ndim=1, name=nm) for nm in ("mu", "phi", "sigma2")]
        if h.shape[0] != n or any(v.size != n for v in vecs):
            raise ValueError("h, mu, phi and sigma2 must have one entry per equation")
        _check_ar_params(vecs[1], vecs[2], "SvState")
        for nm in ("kappa1", "kappa2", "kappa3"):
            if not getattr(self, nm) > 0:
                raise ValueError(f"SvState: {nm} must be positive")
            object.__setattr__(self, nm, float(getattr(self, nm)))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", tuple(beta))
        object.__setattr__(self, "h", h)
        for nm, v in zip(("mu", "phi", "sigma2"), vecs):
            object.__setattr__(self, nm, v)

    @property
    def B0(self) -> np.ndarray:
        return impact_matrix(self.beta, self.alpha.shape[0])

    @property
    def beta_flat(self) -> np.ndarray:
        return np.concatenate([b for b in self.beta]) if len(self.beta) > 1 else np.empty(0)


@dataclass(frozen=True)
class FsvState:
    alpha: np.ndarray  # (n, k)
    l: tuple[np.ndarray, ...]  # l[i] has length min(i, r)
    f: np.ndarray  # (r, T)
    h: np.ndarray  # (n + r, T)
    mu: np.ndarray
    phi: np.ndarray
    sigma2: np.ndarray
    kappa1: float
    kappa2: float
    strict: bool = field(default=True, compare=False)

    def __post_init__(self) -> None:
        alpha = _frozen(self.alpha, ndim=2, name="alpha")
        n = alpha.shape[0]
        f = _frozen(np.atleast_2d(self.f), ndim=2, name="f")
        r = f.shape[0]
        if self.strict and r > (n - 1) / 2:
            raise ValueError(f"factor count r={r} exceeds (n-1)/2 for n={n}")
        if len(self.l) != n:
            raise ValueError(f"need {n} loading rows, got {len(self.l)}")
        l = []
        for i, row in enumerate(self.l):
            row = _frozen(np.asarray(row).reshape(-1), ndim=1, name=f"l[{i}]")
            if row.size != min(i, r):
                raise ValueError(f"loading row {i} must have {min(i, r)} free elements, got {row.size}")
            l.append(row)
        h = _frozen(self.h, ndim=2, name="h")
        vecs = [_frozen(np.atleast_1d(getattr(self, nm)), ndim=1, name=nm) for nm in ("mu", "phi", "sigma2")]
        if h.shape != (n + r, f.shape[1]) or any(v.size != n + r for v in vecs):
            raise ValueError("h, mu, phi and sigma2 must have n + r entries")
        _check_ar_params(vecs[1], vecs[2], "FsvState")
        for nm in ("kappa1", "kappa2"):
            if not getattr(self, nm) > 0:
                raise ValueError(f"FsvState: {nm} must be positive")
            object.__setattr__(self, nm, float(getattr(self, nm)))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "l", tuple(l))
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "h", h)
        for nm, v in zip(("mu", "phi", "sigma2"), vecs):
            object.__setattr__(self, nm, v)

    @property
    def r(self) -> int:
        return self.f.shape[0]

    @property
    def L(self) -> np.ndarray:
        return loadings_matrix(self.l, self.alpha.shape[0], self.r)

    @property
    def l_flat(self) -> np.ndarray:
        parts = [row for row in self.l if row.size]
        return np.concatenate(parts) if parts else np.empty(0)


@dataclass(frozen=True)
class ChainOutput:
    model: str
    draws: tuple
    acceptance_counts: dict[str, tuple[int, int]]
    config: Any
    timings: dict[str, float] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "draws", tuple(self.draws))
        object.__setattr__(self, "_cache", {})

    def __len__(self) -> int:
        return len(self.draws)

    def acceptance_rate(self, step: str) -> float:
        acc, tot = self.acceptance_counts[step]
        return acc / tot if tot else float("nan")

    def stack(self, name: str) -> np.ndarray:
        """Stack one field (or property) of every kept draw along a new first axis."""
        cache = self.__dict__["_cache"]
        if name not in cache:
            arr = np.stack([np.asarray(getattr(d, name), dtype=float) for d in self.draws])
            arr.setflags(write=False)
            cache[name] = arr
        return cache[name]
