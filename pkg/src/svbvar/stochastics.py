"""Random-variate generators and the banded Gaussian precision sampler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, special
from scipy.linalg import lapack

__all__ = [
    "BandedPrecision",
    "draw_gaussian_precision",
    "draw_gig",
    "draw_inverse_wishart",
    "draw_truncated_normal",
    "ln_multivariate_gamma",
    "make_rng",
    "spawn_rngs",
]

_LOG_MASS_FLOOR = np.log(1e-300)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream)``.

    Distinct stream ids give statistically independent sequences, and the same
    pair always reproduces the same sequence.
    """
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative integers")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def spawn_rngs(seed: int, count: int, *, offset: int = 0) -> list[np.random.Generator]:
    return [make_rng(seed, offset + i) for i in range(count)]


# ---------------------------------------------------------------------------
# special functions


def ln_multivariate_gamma(n: int, x: float | np.ndarray) -> float | np.ndarray:
    """Log of the multivariate gamma function of dimension ``n``."""
    if int(n) != n or n < 1:
        raise ValueError(f"dimension must be a positive integer, got {n}")
    n = int(n)
    x = np.asarray(x, dtype=float)
    if np.any(x <= (n - 1) / 2.0):
        raise ValueError(f"ln_multivariate_gamma needs x > (n-1)/2 = {(n - 1) / 2}, got {x}")
    j = np.arange(1, n + 1)
    out = n * (n - 1) / 4.0 * np.log(np.pi) + special.gammaln(x[..., None] + (1.0 - j) / 2.0).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# generalized inverse Gaussian


def _gig_standard(rng: np.random.Generator, lam: float, omega: float, size: int) -> np.ndarray:
    """Draws with density prop. to y^(lam-1) exp(-omega (y + 1/y) / 2), lam >= 0.

    Works on the log scale around the mode, where the log-density is concave,
    and rejects from a flat-centre / exponential-tails envelope built from two
    tangent lines.
    """
    alpha = np.sqrt(omega * omega + lam * lam) - lam

    def psi(x):
        return -alpha * (np.cosh(x) - 1.0) - lam * (np.expm1(x) - x)

    def dpsi(x):
        return -alpha * np.sinh(x) - lam * np.expm1(x)

    v = -psi(1.0)
    if 0.5 <= v <= 2.0:
        t = 1.0
    elif v > 2.0:
        t = np.sqrt(2.0 / (alpha + lam))
    else:
        t = np.log(4.0 / (alpha + 2.0 * lam))
    v = -psi(-1.0)
    if 0.5 <= v <= 2.0:
        s = 1.0
    elif v > 2.0:
        s = np.sqrt(4.0 / (alpha * np.cosh(1.0) + lam))
    else:
        s = np.log1p(1.0 / alpha + np.sqrt(1.0 / alpha**2 + 2.0 / alpha)) if alpha > 0 else np.inf
        if lam > 0:
            s = min(1.0 / lam, s)
    if not (np.isfinite(t) and t > 0):
        t = 1.0
    if not (np.isfinite(s) and s > 0):
        s = 1.0

    eta, zeta = -psi(t), -dpsi(t)
    theta, xi = -psi(-s), dpsi(-s)
    p_left, r_right = 1.0 / xi, 1.0 / zeta
    t_flat = t - r_right * eta
    s_flat = s - p_left * theta
    q = t_flat + s_flat
    total = p_left + q + r_right

    out = np.empty(size)
    filled = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while filled < size:
            m = max(16, int(1.3 * (size - filled)))
            u, vv, w = rng.random(m), rng.random(m), rng.random(m)
            x = np.where(
                u < q / total,
                -s_flat + q * vv,
                np.where(u < (q + r_right) / total, t_flat - r_right * np.log(vv), -s_flat + p_left * np.log(vv)),
            )
            chi = np.where(
                x > t_flat,
                np.exp(-eta - zeta * (x - t)),
                np.where(x < -s_flat, np.exp(-theta + xi * (x + s)), 1.0),
            )
            ok = w * chi <= np.exp(psi(x))
            acc = x[ok][: size - filled]
            out[filled : filled + acc.size] = acc
            filled += acc.size
    ratio = lam / omega
    return np.exp(out) * (ratio + np.sqrt(1.0 + ratio * ratio))


def draw_gig(
    rng: np.random.Generator, p: float, a: float, b: float, size: int | None = None
) -> float | np.ndarray:
    """Draw from the GIG law with density prop. to x^(p-1) exp(-(a x + b / x) / 2)."""
    if a < 0 or b < 0 or not np.isfinite(a) or not np.isfinite(b) or not np.isfinite(p):
        raise ValueError(f"GIG needs finite a >= 0 and b >= 0, got a={a}, b={b}, p={p}")
    n = 1 if size is None else int(size)
    if b == 0.0:
        if not (a > 0 and p > 0):
            raise ValueError(f"GIG with b = 0 needs a > 0 and p > 0, got a={a}, p={p}")
        out = rng.gamma(p, 2.0 / a, size=n)
    elif a == 0.0:
        if not p < 0:
            raise ValueError(f"GIG with a = 0 needs p < 0, got p={p}")
        out = (b / 2.0) / rng.gamma(-p, 1.0, size=n)
    else:
        omega = np.sqrt(a * b)
        y = _gig_standard(rng, abs(p), omega, n)
        if p < 0:
            y = 1.0 / y
        out = np.sqrt(b / a) * y
    return float(out[0]) if size is None else out


# ---------------------------------------------------------------------------
# inverse Wishart


def draw_inverse_wishart(rng: np.random.Generator, nu: float, S: np.ndarray) -> np.ndarray:
    """Draw from IW(nu, S), whose mean is S / (nu - n - 1) for nu > n + 1."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = S.shape[0]
    if S.shape != (n, n):
        raise ValueError(f"scale matrix must be square, got {S.shape}")
    if not nu > n - 1:
        raise ValueError(f"inverse-Wishart needs nu > n - 1 = {n - 1}, got {nu}")
    try:
        C = np.linalg.cholesky(0.5 * (S + S.T))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("inverse-Wishart scale matrix is not positive definite") from exc
    # Bartlett factor of a W(nu, I) draw
    B = np.zeros((n, n))
    B[np.diag_indices(n)] = np.sqrt(rng.chisquare(nu - np.arange(n)))
    B[np.tril_indices(n, -1)] = rng.standard_normal(n * (n - 1) // 2)
    # Sigma = C (B B')^{-1} C' = M M' with M = C B^{-T}
    M = linalg.solve_triangular(B, C.T, lower=True).T
    out = M @ M.T
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# truncated normal


def _right_tail_rejection(rng: np.random.Generator, a: float, b: float, size: int) -> np.ndarray:
    """Standard normal restricted to (a, b) with a well into the right tail."""
    out = np.empty(size)
    filled = 0
    if b - a < 2.0 / a:
        while filled < size:
            m = max(16, 2 * (size - filled))
            x = rng.uniform(a, b, m)
            ok = rng.random(m) <= np.exp(-0.5 * (x * x - a * a))
            acc = x[ok][: size - filled]
            out[filled : filled + acc.size] = acc
            filled += acc.size
        return out
    rate = 0.5 * (a + np.sqrt(a * a + 4.0))
    while filled < size:
        m = max(16, 2 * (size - filled))
        x = a + rng.exponential(1.0 / rate, m)
        ok = (x < b) & (rng.random(m) <= np.exp(-0.5 * (x - rate) ** 2))
        acc = x[ok][: size - filled]
        out[filled : filled + acc.size] = acc
        filled += acc.size
    return out


def draw_truncated_normal(
    rng: np.random.Generator,
    m: float,
    v: float,
    lo: float = -np.inf,
    hi: float = np.inf,
    size: int | None = None,
) -> float | np.ndarray:
    """Draw from N(m, v) restricted to (lo, hi)."""
    if not v > 0:
        raise ValueError(f"variance must be positive, got {v}")
    if not lo < hi:
        raise ValueError(f"need lo < hi, got ({lo}, {hi})")
    sd = np.sqrt(v)
    a, b = (lo - m) / sd, (hi - m) / sd
    # one-sided intervals are mapped onto the right tail
    if a >= 0:
        lower, upper, sign = a, b, 1.0
    elif b <= 0:
        lower, upper, sign = -b, -a, -1.0
    else:
        lower, upper, sign = a, b, 0.0
    n = 1 if size is None else int(size)

    if sign == 0.0:
        # interval straddles zero so its mass is comfortably representable
        pa, pb = special.ndtr(lower), special.ndtr(upper)
        z = special.ndtri(pa + rng.random(n) * (pb - pa))
    else:
        log_hi = special.log_ndtr(-lower)
        log_lo = special.log_ndtr(-upper)
        log_mass = log_hi + np.log1p(-np.exp(log_lo - log_hi)) if np.isfinite(log_lo) else log_hi
        if not log_mass > _LOG_MASS_FLOOR:
            raise FloatingPointError(
                f"truncation interval ({lo}, {hi}) has negligible mass under N({m}, {v})"
            )
        if lower > 8.0:
            z = _right_tail_rejection(rng, lower, upper, n)
        else:
            q_hi, q_lo = special.ndtr(-lower), special.ndtr(-upper)
            z = -special.ndtri(q_lo + rng.random(n) * (q_hi - q_lo))
        z = sign * z
    x = m + sd * z
    x = np.clip(x, np.nextafter(lo, np.inf), np.nextafter(hi, -np.inf))
    return float(x[0]) if size is None else x


# ---------------------------------------------------------------------------
# banded precision sampler


@dataclass(frozen=True)
class BandedPrecision:
    """Symmetric positive-definite matrix in lower band storage.

    ``ab[d, j]`` holds ``K[j + d, j]``; entries past the end of each row are
    ignored.
    """

    ab: np.ndarray

    def __post_init__(self) -> None:
        ab = np.ascontiguousarray(np.atleast_2d(np.asarray(self.ab, dtype=float)))
        if ab.ndim != 2 or ab.shape[1] < 1:
            raise ValueError(f"band storage must be (b+1, T), got {ab.shape}")
        if np.any(ab[0] <= 0):
            raise np.linalg.LinAlgError("banded precision has a non-positive diagonal entry")
        object.__setattr__(self, "ab", ab)

    @property
    def dim(self) -> int:
        return self.ab.shape[1]

    @property
    def bandwidth(self) -> int:
        return self.ab.shape[0] - 1

    @classmethod
    def from_dense(cls, K: np.ndarray, bandwidth: int) -> "BandedPrecision":
        K = np.asarray(K, dtype=float)
        T = K.shape[0]
        ab = np.zeros((bandwidth + 1, T))
        for d in range(bandwidth + 1):
            ab[d, : T - d] = np.diagonal(K, -d)
        return cls(ab)

    @classmethod
    def ar1(cls, phi: float, sigma2: float, T: int) -> "BandedPrecision":
        """Precision of a zero-mean stationary AR(1) path of length T."""
        if not abs(phi) < 1 or not sigma2 > 0:
            raise ValueError("AR(1) precision needs |phi| < 1 and sigma2 > 0")
        ab = np.zeros((2, T))
        ab[0] = (1.0 + phi * phi) / sigma2
        ab[0, 0] = 1.0 / sigma2
        ab[0, -1] = 1.0 / sigma2
        if T == 1:
            ab[0, 0] = (1.0 - phi * phi) / sigma2
        ab[1, : T - 1] = -phi / sigma2
        return cls(ab)

    def add_diagonal(self, d: np.ndarray) -> "BandedPrecision":
        ab = self.ab.copy()
        ab[0] += d
        return BandedPrecision(ab)

    def to_dense(self) -> np.ndarray:
        T, b = self.dim, self.bandwidth
        K = np.zeros((T, T))
        for d in range(b + 1):
            idx = np.arange(T - d)
            K[idx + d, idx] = self.ab[d, : T - d]
            K[idx, idx + d] = self.ab[d, : T - d]
        return K

    def matvec(self, x: np.ndarray) -> np.ndarray:
        T, b = self.dim, self.bandwidth
        out = self.ab[0] * x
        for d in range(1, b + 1):
            band = self.ab[d, : T - d]
            out[d:] += band * x[:-d]
            out[:-d] += band * x[d:]
        return out

    def cholesky(self) -> np.ndarray:
        try:
            return linalg.cholesky_banded(self.ab, lower=True)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("banded precision is not positive definite") from exc

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(self.cholesky()[0])))


def draw_gaussian_precision(
    rng: np.random.Generator,
    c: np.ndarray,
    K: BandedPrecision,
    size: int | None = None,
    *,
    return_mean: bool = False,
):
    """Draw from N(K^{-1} c, K^{-1}) using a banded Cholesky factor of K."""
    c = np.asarray(c, dtype=float)
    if c.shape != (K.dim,):
        raise ValueError(f"c has shape {c.shape}, precision has dimension {K.dim}")
    L = K.cholesky()
    mean = linalg.cho_solve_banded((L, True), c)
    n = 1 if size is None else int(size)
    z = rng.standard_normal((K.dim, n))
    u, info = lapack.dtbtrs(L, z, uplo="L", trans="T", diag="N")
    if info != 0:
        raise np.linalg.LinAlgError(f"banded triangular solve failed (info={info})")
    draws = mean[:, None] + u
    out = draws[:, 0] if size is None else draws.T
    return (out, mean) if return_mean else out
