"""Product reference densities on boxes.

Every transport layer couples its fitted density to a product reference
whose one-dimensional marginals are either uniform on the variable's
interval or a truncated Gaussian (the boxing used for natively unbounded
variables).  All CDFs and inverse CDFs are analytic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

_TINY = 1e-15


@dataclass(frozen=True)
class VariableSpec:
    """Working interval and reference marginal for one variable."""

    lo: float
    hi: float
    kind: str = "uniform"          # "uniform" | "truncgauss"
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")
        if self.kind not in ("uniform", "truncgauss"):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.kind == "truncgauss" and self.sigma <= 0:
            raise ValueError("sigma must be positive")


def uniform_variable(lo: float, hi: float) -> VariableSpec:
    return VariableSpec(float(lo), float(hi))


def gaussian_variable(mu: float, sigma: float, half_width: float = 4.0) -> VariableSpec:
    """Boxing of an unbounded Gaussian variable at ``mu +- half_width*sigma``."""
    return VariableSpec(float(mu - half_width * sigma), float(mu + half_width * sigma),
                        "truncgauss", float(mu), float(sigma))


class Reference:
    """Product reference density over a list of variable specs."""

    def __init__(self, specs: list[VariableSpec]):
        self.specs = list(specs)
        self.lows = np.array([s.lo for s in specs])
        self.highs = np.array([s.hi for s in specs])
        self._z_lo = np.empty(len(specs))
        self._z_hi = np.empty(len(specs))
        self._mass = np.empty(len(specs))
        for k, s in enumerate(specs):
            if s.kind == "truncgauss":
                self._z_lo[k] = ndtr((s.lo - s.mu) / s.sigma)
                self._z_hi[k] = ndtr((s.hi - s.mu) / s.sigma)
                self._mass[k] = self._z_hi[k] - self._z_lo[k]
            else:
                self._z_lo[k] = 0.0
                self._z_hi[k] = 1.0
                self._mass[k] = s.hi - s.lo

    @property
    def dim(self) -> int:
        return len(self.specs)

    def subset(self, idx) -> "Reference":
        return Reference([self.specs[i] for i in idx])

    def cdf_1d(self, k: int, x: np.ndarray) -> np.ndarray:
        s = self.specs[k]
        x = np.asarray(x, dtype=float)
        if s.kind == "uniform":
            u = (x - s.lo) / (s.hi - s.lo)
        else:
            u = (ndtr((x - s.mu) / s.sigma) - self._z_lo[k]) / self._mass[k]
        return np.clip(u, 0.0, 1.0)

    def invcdf_1d(self, k: int, u: np.ndarray) -> np.ndarray:
        s = self.specs[k]
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        if s.kind == "uniform":
            x = s.lo + u * (s.hi - s.lo)
        else:
            p = np.clip(self._z_lo[k] + u * self._mass[k], _TINY, 1.0 - _TINY)
            x = s.mu + s.sigma * ndtri(p)
        return np.clip(x, s.lo, s.hi)

    def pdf_1d(self, k: int, x: np.ndarray) -> np.ndarray:
        return np.exp(self.logpdf_1d(k, x))

    def logpdf_1d(self, k: int, x: np.ndarray) -> np.ndarray:
        s = self.specs[k]
        x = np.asarray(x, dtype=float)
        if s.kind == "uniform":
            return np.full(x.shape, -np.log(s.hi - s.lo))
        z = (x - s.mu) / s.sigma
        return (-0.5 * z ** 2 - 0.5 * np.log(2.0 * np.pi) - np.log(s.sigma)
                - np.log(self._mass[k]))

    def logpdf_prefix(self, X: np.ndarray, k: int | None = None) -> np.ndarray:
        """Sum of the first ``k`` marginal log densities, default all."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        k = X.shape[1] if k is None else k
        out = np.zeros(X.shape[0])
        for i in range(k):
            out += self.logpdf_1d(i, X[:, i])
        return out

    def logpdf(self, X: np.ndarray) -> np.ndarray:
        return self.logpdf_prefix(X)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.from_uniform(rng.random((n, self.dim)))

    def from_uniform(self, U: np.ndarray) -> np.ndarray:
        """Map uniform [0,1)^d points through the diagonal inverse CDF."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        X = np.empty_like(U)
        for k in range(U.shape[1]):
            X[:, k] = self.invcdf_1d(k, U[:, k])
        return X

    def volume(self) -> float:
        return float(np.prod(self.highs - self.lows))

    def params_1d(self, k: int) -> tuple[int, float, float, float, float]:
        """Scalar parameter pack (kind, mu, sigma, z_lo, mass) for kernels."""
        s = self.specs[k]
        if s.kind == "uniform":
            return (0, 0.0, 1.0, 0.0, float(self._mass[k]))
        return (1, s.mu, s.sigma, float(self._z_lo[k]), float(self._mass[k]))
