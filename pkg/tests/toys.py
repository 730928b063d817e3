"""Linear regression with a normal-inverse-gamma prior: evidence in closed form."""

import numpy as np
from scipy import special, stats


class RegressionToy:
    """y = X b + e, e ~ N(0, s2 I), b | s2 ~ N(0, s2 V0), s2 ~ IG(a0, b0).

    Points are psi = (b, log s2).
    """

    def __init__(self, seed: int = 0, T: int = 40, k: int = 2, a0: float = 3.0, b0: float = 2.0, v0: float = 4.0):
        rng = np.random.default_rng(seed)
        self.X = np.column_stack([np.ones(T), rng.standard_normal((T, k - 1))])
        self.y = self.X @ rng.normal(0, 1, k) + rng.normal(0, 0.8, T)
        self.T, self.k, self.a0, self.b0 = T, k, a0, b0
        self.V0 = v0 * np.eye(k)
        V0inv = np.linalg.inv(self.V0)
        self.Vn = np.linalg.inv(V0inv + self.X.T @ self.X)
        self.mn = self.Vn @ self.X.T @ self.y
        self.an = a0 + T / 2
        self.bn = b0 + 0.5 * (self.y @ self.y - self.mn @ np.linalg.solve(self.Vn, self.mn))

    @property
    def dim(self) -> int:
        return self.k + 1

    def log_evidence(self) -> float:
        scale = (self.b0 / self.a0) * (np.eye(self.T) + self.X @ self.V0 @ self.X.T)
        return float(stats.multivariate_t(np.zeros(self.T), scale, df=2 * self.a0).logpdf(self.y))

    def posterior_draws(self, rng, M: int) -> np.ndarray:
        s2 = self.bn / rng.gamma(self.an, 1.0, M)
        z = rng.standard_normal((M, self.k)) @ np.linalg.cholesky(self.Vn).T
        b = self.mn + np.sqrt(s2)[:, None] * z
        return np.column_stack([b, np.log(s2)])

    def log_kernel(self, psi) -> np.ndarray | float:
        """log p(y | b, s2) + log p(b, s2) + log s2, the last term from the log transform."""
        psi = np.asarray(psi, dtype=float)
        one = psi.ndim == 1
        psi = np.atleast_2d(psi)
        b, ls2 = psi[:, : self.k], psi[:, self.k]
        s2 = np.exp(ls2)
        resid = self.y[None, :] - b @ self.X.T
        loglik = -0.5 * self.T * (np.log(2 * np.pi) + ls2) - 0.5 * np.sum(resid**2, axis=1) / s2
        Lv = np.linalg.cholesky(self.V0)
        zb = np.linalg.solve(Lv, b.T)
        logprior_b = (
            -0.5 * self.k * (np.log(2 * np.pi) + ls2) - np.sum(np.log(np.diag(Lv))) - 0.5 * np.sum(zb**2, axis=0) / s2
        )
        logprior_s2 = self.a0 * np.log(self.b0) - special.gammaln(self.a0) - (self.a0 + 1) * ls2 - self.b0 / s2
        out = loglik + logprior_b + logprior_s2 + ls2
        return float(out[0]) if one else out

    def exact_family(self):
        toy = self

        class ExactPosterior:
            def sample(self, rng, R):
                return toy.posterior_draws(rng, R)

            def logpdf(self, psi):
                return toy.log_kernel(psi) - toy.log_evidence()

        return ExactPosterior()
