"""Design problem bundles: spaces, forward map, noise, and joint density.

A `DesignProblem` collects everything the transport and criterion layers
need: variable specs for the design/data/parameter blocks, the vectorized
parameter-to-observable map with a shared evaluation counter, per-design
noise levels, and the prior and design densities.  The unnormalized joint
log density over (e, d, m) follows the additive-Gaussian-noise likelihood
factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .reference import VariableSpec


class EvalCounter:
    """Shared forward-solve counter across a problem and its stages."""

    def __init__(self):
        self.count = 0


class ForwardModelError(RuntimeError):
    """Raised when the forward map fails at specific inputs."""

    def __init__(self, E: np.ndarray, M: np.ndarray, detail: str):
        self.inputs = (np.asarray(E), np.asarray(M))
        super().__init__(f"forward model failure: {detail}")


@dataclass
class DesignProblem:
    """One inverse problem with a designable experiment."""

    name: str
    e_vars: list[VariableSpec]
    d_vars: list[VariableSpec]
    m_vars: list[VariableSpec]
    pto: callable                      # (E (n,Ne), M (n,Nm)) -> (n,Nd)
    noise_std: callable                # (E (n,Ne)) -> (n,Nd)
    prior_logpdf: callable             # (M (n,Nm)) -> (n,)
    design_logpdf: callable = None     # (E (n,Ne)) -> (n,); default uniform
    stages: list["DesignProblem"] | None = None
    oracle: callable = None            # e -> (eig, post_trace, post_cov)
    counter: EvalCounter = field(default_factory=EvalCounter)

    def __post_init__(self):
        if self.design_logpdf is None:
            vol = float(np.prod([v.hi - v.lo for v in self.e_vars]))
            self.design_logpdf = lambda E: np.full(np.atleast_2d(E).shape[0],
                                                   -np.log(vol))
        for v in self.e_vars + self.d_vars + self.m_vars:
            if not v.lo < v.hi:
                raise ValueError(f"empty box for variable {v}")

    @property
    def blocks(self) -> tuple[int, int, int]:
        return (len(self.e_vars), len(self.d_vars), len(self.m_vars))

    @property
    def variables(self) -> list[VariableSpec]:
        return list(self.e_vars) + list(self.d_vars) + list(self.m_vars)

    @property
    def dim(self) -> int:
        return sum(self.blocks)

    def split(self, X: np.ndarray):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ne, nd, nm = self.blocks
        return X[:, :ne], X[:, ne:ne + nd], X[:, ne + nd:]

    def eval_pto(self, E: np.ndarray, M: np.ndarray) -> np.ndarray:
        """Counted forward evaluation; one count per batch row."""
        E = np.atleast_2d(np.asarray(E, dtype=float))
        M = np.atleast_2d(np.asarray(M, dtype=float))
        self.counter.count += M.shape[0]
        F = np.asarray(self.pto(E, M), dtype=float)
        if not np.all(np.isfinite(F)):
            bad = int(np.argmax(~np.all(np.isfinite(F), axis=1)))
            raise ForwardModelError(E[bad], M[bad], "non-finite observable")
        return F

    def log_likelihood(self, E: np.ndarray, D: np.ndarray, M: np.ndarray) -> np.ndarray:
        """Gaussian log likelihood with the design-dependent noise level."""
        F = self.eval_pto(E, M)
        sig = np.atleast_2d(np.asarray(self.noise_std(np.atleast_2d(E)), dtype=float))
        resid = (F - np.atleast_2d(D)) / sig
        return -0.5 * np.sum(resid ** 2, axis=1) - np.sum(np.log(sig), axis=1)

    def joint_log_density(self, X: np.ndarray) -> np.ndarray:
        """Unnormalized log pi(e, d, m) for a batch of stacked points."""
        E, D, M = self.split(X)
        return (self.log_likelihood(E, D, M)
                + self.prior_logpdf(M)
                + self.design_logpdf(E))

    def joint_log_density_point(self, e, d, m) -> float:
        x = np.concatenate([np.atleast_1d(np.asarray(e, dtype=float)),
                            np.atleast_1d(np.asarray(d, dtype=float)),
                            np.atleast_1d(np.asarray(m, dtype=float))])
        return float(self.joint_log_density(x[None, :])[0])

    def stage(self, k: int) -> "DesignProblem":
        """The k-th stage problem (itself when no stages are declared)."""
        if self.stages is None:
            return self
        return self.stages[k]

    @property
    def n_stages(self) -> int:
        return len(self.stages) if self.stages is not None else 1

    def e_box(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([v.lo for v in self.e_vars]),
                np.array([v.hi for v in self.e_vars]))
