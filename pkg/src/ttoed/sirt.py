"""Squared inverse Rosenblatt transport from a square-root tensor train.

A `SirtMap` normalizes the squared train plus a small defensive multiple
of the reference density, exposes exact prefix marginals through trailing
Gram matrices, and realizes the triangular order-preserving coupling
between the reference and the normalized density by inverting exact
one-dimensional conditional CDFs (polynomial part integrated in a
Legendre series, defensive part analytic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import eval_cdf_kernel, eval_pdf_kernel, invert_cdf_kernel
from .ftt import TensorTrain
from .reference import Reference

_CHUNK = 16384
_BISECT_ITERS = 20
_NEWTON_ITERS = 4


@dataclass
class TriangularPoint:
    """Batch of mapped points with the log Jacobian of the applied map."""

    coords: np.ndarray
    logdet: np.ndarray


class SirtMap:
    """One KR layer: normalized defensive density with exact marginals."""

    def __init__(self, g: TensorTrain, tau: float, z: float,
                 grams: list[np.ndarray], reference: Reference):
        self.g = g
        self.tau = float(tau)
        self.z = float(z)
        self.grams = grams                  # grams[k] integrates dims k..n-1
        self.reference = reference
        self._chol = [None] * (g.dims + 1)
        for k in range(g.dims + 1):
            G = grams[k]
            w, V = np.linalg.eigh(0.5 * (G + G.T))
            w = np.clip(w, 0.0, None)
            self._chol[k] = V * np.sqrt(w)[None, :]
        # core values on the CDF grid with the trailing Gram factor folded
        # in, flattened for one GEMM per batch: (r_k, n_cdf * r_{k+1})
        self._core_cdf_chol = []
        # plain cores flattened for interpolation GEMMs: (n_b, r_k * r_{k+1})
        self._core_mat = []
        for k, (b, core) in enumerate(zip(g.bases, g.cores)):
            gc = np.einsum("cj,ajb->acb", b.interp_to_cdf, core)
            gc = gc @ self._chol[k + 1]
            r0, n_c, r1 = gc.shape
            self._core_cdf_chol.append(np.ascontiguousarray(gc.reshape(r0, n_c * r1)))
            self._core_mat.append(np.ascontiguousarray(
                core.transpose(1, 0, 2).reshape(core.shape[1], r0 * r1)))

    @property
    def dims(self) -> int:
        return self.g.dims

    @property
    def bases(self):
        return self.g.bases

    # -- density evaluations ---------------------------------------------

    def _log_numer_full(self, gvals: np.ndarray, X: np.ndarray) -> np.ndarray:
        """log(g(x)^2 + tau * lambda(x)), stable down to tiny values."""
        with np.errstate(divide="ignore"):
            log_g2 = 2.0 * np.log(np.abs(gvals))
        if self.tau == 0.0:
            return log_g2
        log_def = np.log(self.tau) + self.reference.logpdf(X)
        return np.logaddexp(log_g2, log_def)

    def log_density(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        gvals = self.g.evaluate_batch(X)
        return self._log_numer_full(gvals, X) - np.log(self.z)

    def density(self, X: np.ndarray) -> np.ndarray:
        return np.exp(self.log_density(X))

    def _advance(self, phi: np.ndarray, x_k: np.ndarray, k: int) -> np.ndarray:
        """Append one dimension to the left core product."""
        W = self.bases[k].interp_matrix(x_k)            # (n, n_b)
        r0, _, r1 = self.g.cores[k].shape
        T = (W @ self._core_mat[k]).reshape(-1, r0, r1)
        return np.matmul(phi[:, None, :], T)[:, 0, :]

    def _left_product(self, X: np.ndarray, k: int) -> np.ndarray:
        """Accumulated product of the first ``k`` cores, shape (n, r_k)."""
        phi = np.ones((X.shape[0], 1))
        for i in range(k):
            phi = self._advance(phi, X[:, i], i)
        return phi

    def _log_numer_prefix(self, phi: np.ndarray, X: np.ndarray, k: int) -> np.ndarray:
        """log of the unnormalized marginal over the first k dims."""
        W = phi @ self._chol[k]
        q = np.sum(W * W, axis=1)
        with np.errstate(divide="ignore"):
            log_q = np.log(q)
        if self.tau == 0.0:
            return log_q
        log_def = np.log(self.tau) + self.reference.logpdf_prefix(X, k)
        return np.logaddexp(log_q, log_def)

    def marginal_log_density(self, Xp: np.ndarray) -> np.ndarray:
        """Log marginal density of the first ``k`` coordinates."""
        Xp = np.atleast_2d(np.asarray(Xp, dtype=float))
        k = Xp.shape[1]
        if not 1 <= k <= self.dims:
            raise ValueError(f"prefix length {k} outside [1, {self.dims}]")
        self._check_prefix_inside(Xp)
        phi = self._left_product(Xp, k)
        return self._log_numer_prefix(phi, Xp, k) - np.log(self.z)

    def marginal_density(self, k: int, Xp: np.ndarray) -> np.ndarray:
        Xp = np.atleast_2d(np.asarray(Xp, dtype=float))
        if Xp.shape[1] != k:
            raise ValueError(f"prefix has {Xp.shape[1]} coordinates, expected {k}")
        return np.exp(self.marginal_log_density(Xp))

    def conditional_log_density(self, x_prefix: np.ndarray, X_tail: np.ndarray) -> np.ndarray:
        """log p(x_tail | x_prefix) for a fixed prefix and a batch of tails."""
        x_prefix = np.asarray(x_prefix, dtype=float).reshape(-1)
        X_tail = np.atleast_2d(np.asarray(X_tail, dtype=float))
        k = x_prefix.size
        X = np.hstack([np.tile(x_prefix, (X_tail.shape[0], 1)), X_tail])
        k_end = X.shape[1]
        phi_full = self._left_product(X, k_end)
        if k_end == self.dims:
            log_full = self._log_numer_full(phi_full[:, 0], X)
        else:
            log_full = self._log_numer_prefix(phi_full, X, k_end)
        phi = self._left_product(x_prefix[None, :], k)
        log_marg = self._log_numer_prefix(phi, x_prefix[None, :], k)
        return log_full - log_marg[0]

    def _check_prefix_inside(self, Xp: np.ndarray) -> None:
        for k in range(Xp.shape[1]):
            b = self.bases[k]
            col = Xp[:, k]
            if np.any(col < b.a) or np.any(col > b.b):
                bad = col[(col < b.a) | (col > b.b)][0]
                raise ValueError(
                    f"coordinate {bad} of dimension {k} outside [{b.a}, {b.b}]")

    # -- conditional CDF machinery ---------------------------------------

    def _dim_cdf_data(self, phi: np.ndarray, log_def_prefix: np.ndarray, k: int):
        """Per-sample polynomial pdf/cdf series for dimension ``k``.

        Returns (pdf coeffs (n, n_c), cdf coeffs (n, n_c+1), defensive
        prefix weight (n,), denominator (n,)), coefficient rows contiguous
        for the kernels.
        """
        basis = self.bases[k]
        r1 = self.g.cores[k].shape[2]
        n_c = basis.cdf_nodes.size
        W = (phi @ self._core_cdf_chol[k]).reshape(-1, n_c, r1)
        q = np.sum(W * W, axis=2)                     # (n, n_c)
        pdf_c = basis.pdf_coeffs(q)                   # (n_c, n)
        cdf_c = basis.cdf_coeffs(pdf_c)               # (n_c + 1, n)
        if self.tau > 0.0:
            defw = self.tau * np.exp(log_def_prefix)
        else:
            defw = np.zeros(phi.shape[0])
        # polynomial cdf at b is the plain sum of series coefficients
        # (Legendre P_l(1) = 1); the defensive part adds defw exactly
        denom = cdf_c.sum(axis=0) + defw
        return (np.ascontiguousarray(pdf_c.T), np.ascontiguousarray(cdf_c.T),
                defw, denom)

    def _invert_dim(self, pdf_c, cdf_c, defw, denom, k, u):
        basis = self.bases[k]
        kind, mu, sigma, zlo, mass = self.reference.params_1d(k)
        return invert_cdf_kernel(cdf_c, pdf_c, defw,
                                 np.clip(np.asarray(u, dtype=float), 0.0, 1.0),
                                 denom, basis.a, basis.b, kind, mu, sigma,
                                 zlo, mass, _BISECT_ITERS, _NEWTON_ITERS)

    def _forward_dim(self, cdf_c, defw, denom, k, x):
        kind, mu, sigma, zlo, mass = self.reference.params_1d(k)
        basis = self.bases[k]
        num = eval_cdf_kernel(cdf_c, defw, np.asarray(x, dtype=float),
                              basis.a, basis.b, kind, mu, sigma, zlo, mass)
        return np.clip(num / denom, 0.0, 1.0)

    # -- transport operations --------------------------------------------

    def push_forward(self, V: np.ndarray) -> TriangularPoint:
        """Map reference variates to target samples; logdet of the push."""
        V = np.atleast_2d(np.asarray(V, dtype=float))
        return _chunked(self._push_chunk, V)

    def _push_chunk(self, V: np.ndarray) -> TriangularPoint:
        n, d = V.shape
        if d != self.dims:
            raise ValueError(f"points have {d} coordinates, map has {self.dims}")
        X = np.empty_like(V)
        phi = np.ones((n, 1))
        log_def = np.zeros(n)
        for k in range(d):
            pdf_c, cdf_c, defw, denom = self._dim_cdf_data(phi, log_def, k)
            u = self.reference.cdf_1d(k, V[:, k])
            X[:, k] = self._invert_dim(pdf_c, cdf_c, defw, denom, k, u)
            phi = self._advance(phi, X[:, k], k)
            log_def += self.reference.logpdf_1d(k, X[:, k])
        log_p = self._log_numer_full(phi[:, 0], X) - np.log(self.z)
        logdet = self.reference.logpdf(V) - log_p
        return TriangularPoint(coords=X, logdet=logdet)

    def pull_back(self, X: np.ndarray) -> TriangularPoint:
        """Inverse of the push; logdet of the pull (negated push logdet)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self._check_prefix_inside(X)
        return _chunked(self._pull_chunk, X)

    def _pull_chunk(self, X: np.ndarray) -> TriangularPoint:
        n, d = X.shape
        if d != self.dims:
            raise ValueError(f"points have {d} coordinates, map has {self.dims}")
        V = np.empty_like(X)
        phi = np.ones((n, 1))
        log_def = np.zeros(n)
        for k in range(d):
            pdf_c, cdf_c, defw, denom = self._dim_cdf_data(phi, log_def, k)
            u = self._forward_dim(cdf_c, defw, denom, k, X[:, k])
            V[:, k] = self.reference.invcdf_1d(k, u)
            phi = self._advance(phi, X[:, k], k)
            log_def += self.reference.logpdf_1d(k, X[:, k])
        log_p = self._log_numer_full(phi[:, 0], X) - np.log(self.z)
        logdet = log_p - self.reference.logpdf(V)
        return TriangularPoint(coords=V, logdet=logdet)

    def pull_prefix(self, Xp: np.ndarray) -> TriangularPoint:
        """Rosenblatt image of a leading block; logdet of the marginal pull."""
        Xp = np.atleast_2d(np.asarray(Xp, dtype=float))
        self._check_prefix_inside(Xp)
        return _chunked(self._pull_prefix_chunk, Xp)

    def _pull_prefix_chunk(self, Xp: np.ndarray) -> TriangularPoint:
        n, k_len = Xp.shape
        V = np.empty_like(Xp)
        phi = np.ones((n, 1))
        log_def = np.zeros(n)
        for k in range(k_len):
            pdf_c, cdf_c, defw, denom = self._dim_cdf_data(phi, log_def, k)
            u = self._forward_dim(cdf_c, defw, denom, k, Xp[:, k])
            V[:, k] = self.reference.invcdf_1d(k, u)
            phi = self._advance(phi, Xp[:, k], k)
            log_def += self.reference.logpdf_1d(k, Xp[:, k])
        log_marg = self._log_numer_prefix(phi, Xp, k_len) - np.log(self.z)
        logdet = log_marg - self.reference.logpdf_prefix(V, k_len)
        return TriangularPoint(coords=V, logdet=logdet)

    def conditional_push(self, x_prefix: np.ndarray, V_tail: np.ndarray,
                         prefix_repeat: int = 1) -> TriangularPoint:
        """Sample the conditional given an exact leading block.

        ``x_prefix`` may be a single point of k coordinates (broadcast) or
        a batch matching ``V_tail``; with ``prefix_repeat = r`` each
        prefix row serves ``r`` consecutive tail rows and the prefix work
        is done once per distinct row.  The tail may be partial (fewer
        than the remaining dimensions); the pushed block is then a sample
        of the conditional marginal over those coordinates.  The logdet
        is that of the conditional map, so ``log rho_tail(v) - logdet``
        is the conditional log density at the output.
        """
        V_tail = np.atleast_2d(np.asarray(V_tail, dtype=float))
        x_prefix = np.asarray(x_prefix, dtype=float)
        if x_prefix.ndim == 1:
            Xp = x_prefix[None, :]
            prefix_repeat = V_tail.shape[0]
        else:
            Xp = x_prefix
        if Xp.shape[0] * prefix_repeat != V_tail.shape[0]:
            raise ValueError("prefix/tail batch mismatch")
        self._check_prefix_inside(np.asarray(Xp))
        k_len = Xp.shape[1]
        if k_len + V_tail.shape[1] > self.dims:
            raise ValueError("prefix + tail exceed the map dimension")
        if prefix_repeat == 1:
            return _chunked(lambda a, b: self._cond_push_chunk(a, b), Xp, V_tail)
        # compute prefix state once per distinct row, then expand
        phi = self._left_product(Xp, k_len)
        log_def = self.reference.logpdf_prefix(Xp, k_len)
        log_marg = self._log_numer_prefix(phi, Xp, k_len)
        state = np.hstack([Xp, phi, log_def[:, None], log_marg[:, None]])
        state = np.repeat(state, prefix_repeat, axis=0)
        return _chunked(lambda s, b: self._cond_push_state(s, b, k_len),
                        state, V_tail)

    def _cond_push_chunk(self, Xp: np.ndarray, V_tail: np.ndarray) -> TriangularPoint:
        k_len = Xp.shape[1]
        phi = self._left_product(Xp, k_len)
        log_def = self.reference.logpdf_prefix(Xp, k_len)
        log_marg = self._log_numer_prefix(phi, Xp, k_len)
        return self._cond_push_tail(Xp, phi, log_def, log_marg, V_tail)

    def _cond_push_state(self, state: np.ndarray, V_tail: np.ndarray,
                         k_len: int) -> TriangularPoint:
        Xp = state[:, :k_len]
        phi = state[:, k_len:-2]
        log_def = state[:, -2].copy()
        log_marg = state[:, -1]
        return self._cond_push_tail(Xp, phi, log_def, log_marg, V_tail)

    def _cond_push_tail(self, Xp, phi, log_def, log_marg, V_tail) -> TriangularPoint:
        n = Xp.shape[0]
        k_len = Xp.shape[1]
        k_end = k_len + V_tail.shape[1]
        X = np.hstack([Xp, np.empty_like(V_tail)])
        log_ref_tail = np.zeros(n)
        for j in range(V_tail.shape[1]):
            k = k_len + j
            pdf_c, cdf_c, defw, denom = self._dim_cdf_data(phi, log_def, k)
            u = self.reference.cdf_1d(k, V_tail[:, j])
            X[:, k] = self._invert_dim(pdf_c, cdf_c, defw, denom, k, u)
            phi = self._advance(phi, X[:, k], k)
            log_def += self.reference.logpdf_1d(k, X[:, k])
            log_ref_tail += self.reference.logpdf_1d(k, V_tail[:, j])
        if k_end == self.dims:
            log_num = self._log_numer_full(phi[:, 0], X)
        else:
            log_num = self._log_numer_prefix(phi, X, k_end)
        logdet = log_ref_tail - (log_num - log_marg)
        return TriangularPoint(coords=X[:, k_len:], logdet=logdet)

    def cdf_invert(self, k: int, x_prefix: np.ndarray, u) -> np.ndarray:
        """Invert the k-th conditional CDF (1-based k) at quantile(s) u."""
        if not 1 <= k <= self.dims:
            raise ValueError(f"dimension index {k} outside [1, {self.dims}]")
        x_prefix = np.asarray(x_prefix, dtype=float).reshape(-1)
        if x_prefix.size != k - 1:
            raise ValueError(f"prefix must have {k - 1} coordinates")
        u_arr = np.atleast_1d(np.asarray(u, dtype=float))
        Xp = np.tile(x_prefix, (u_arr.size, 1))
        if k > 1:
            self._check_prefix_inside(Xp)
        phi = self._left_product(Xp, k - 1)
        log_def = self.reference.logpdf_prefix(Xp, k - 1)
        pdf_c, cdf_c, defw, denom = self._dim_cdf_data(phi, log_def, k - 1)
        x = self._invert_dim(pdf_c, cdf_c, defw, denom, k - 1, u_arr)
        return x if np.ndim(u) else float(x[0])

    def conditional_cdf(self, k: int, x_prefix: np.ndarray, x) -> np.ndarray:
        """Forward conditional CDF value of the k-th coordinate (1-based)."""
        x_prefix = np.asarray(x_prefix, dtype=float).reshape(-1)
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        Xp = np.tile(x_prefix, (x_arr.size, 1))
        phi = self._left_product(Xp, k - 1)
        log_def = self.reference.logpdf_prefix(Xp, k - 1)
        pdf_c, cdf_c, defw, denom = self._dim_cdf_data(phi, log_def, k - 1)
        u = self._forward_dim(cdf_c, defw, denom, k - 1, x_arr)
        return u if np.ndim(x) else float(u[0])


def _chunked(fn, *arrays, chunk: int = _CHUNK) -> TriangularPoint:
    n = arrays[0].shape[0]
    if n <= chunk:
        return fn(*arrays)
    coords = []
    logdets = []
    for start in range(0, n, chunk):
        part = fn(*(a[start:start + chunk] for a in arrays))
        coords.append(part.coords)
        logdets.append(part.logdet)
    return TriangularPoint(coords=np.vstack(coords), logdet=np.concatenate(logdets))


def build_sirt(g: TensorTrain, tau_rel: float = 1e-8,
               reference: Reference | None = None) -> SirtMap:
    """Normalize a square-root train into a transport layer.

    The trailing Gram matrices come from the exact backward recursion
    over basis quadrature; the defensive weight is ``tau_rel`` times the
    mean of g^2 over the box.
    """
    if tau_rel < 0:
        raise ValueError("tau_rel must be nonnegative")
    n = g.dims
    if reference is None:
        from .reference import uniform_variable
        reference = Reference([uniform_variable(b.a, b.b) for b in g.bases])
    if reference.dim != n:
        raise ValueError("reference dimension mismatch")

    grams: list[np.ndarray] = [None] * (n + 1)
    grams[n] = np.ones((1, 1))
    for k in range(n - 1, -1, -1):
        core = g.cores[k]
        w = g.bases[k].quad_weights
        CG = np.einsum("ajb,bc->ajc", core, grams[k + 1], optimize=True)
        grams[k] = np.einsum("ajb,j,cjb->ac", CG, w, core, optimize=True)
        grams[k] = 0.5 * (grams[k] + grams[k].T)

    z_g = float(grams[0][0, 0])
    tau = tau_rel * z_g / reference.volume()
    z = z_g + tau
    if not (np.isfinite(z) and z > 0):
        raise ValueError(f"normalizing constant must be positive, got {z}")
    return SirtMap(g=g, tau=tau, z=z, grams=grams, reference=reference)
