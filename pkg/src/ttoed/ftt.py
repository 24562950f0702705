"""Functional tensor trains on boxes, built by alternating cross approximation.

A `TensorTrain` represents a multivariate function as a product of
matrix-valued univariate interpolants, one three-way core per dimension.
`build_cross` assembles the cores from pointwise evaluations of the target
function using maxvol-refined cross pivots, with rank adaptation by random
column enrichment and a held-out quasi-random residual check per sweep.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .basis import Basis1D
from .sobol import sobol_points

logger = logging.getLogger(__name__)


class CrossEvaluationError(RuntimeError):
    """Raised when the target returns a non-finite value during a build."""

    def __init__(self, point: np.ndarray, value: float):
        self.point = np.asarray(point)
        self.value = value
        super().__init__(
            f"target function returned non-finite value {value!r} at {self.point.tolist()}"
        )


@dataclass
class CrossOptions:
    """Knobs for the alternating cross builder."""

    max_rank: int = 20
    init_rank: int = 2
    kick_rank: int = 2
    max_sweeps: int = 6
    rel_tol: float = 1e-8
    sample_budget: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.init_rank > self.max_rank:
            raise ValueError("init_rank must not exceed max_rank")


@dataclass
class CrossReport:
    """Build diagnostics attached to a cross-approximated train."""

    converged: bool
    residual: float
    n_evals: int
    sweeps: int
    rank_capped: bool = False


@dataclass
class TensorTrain:
    """Product of matrix-valued univariate interpolants over a box."""

    bases: list[Basis1D]
    cores: list[np.ndarray]
    build: CrossReport | None = field(default=None, compare=False)

    def __post_init__(self):
        for k, core in enumerate(self.cores):
            if core.ndim != 3 or core.shape[1] != self.bases[k].degree:
                raise ValueError(f"core {k} has shape {core.shape}, expected "
                                 f"(r, {self.bases[k].degree}, r')")
            if k > 0 and core.shape[0] != self.cores[k - 1].shape[2]:
                raise ValueError(f"rank mismatch between cores {k - 1} and {k}")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")

    @property
    def dims(self) -> int:
        return len(self.cores)

    @property
    def ranks(self) -> list[int]:
        return [1] + [c.shape[2] for c in self.cores]

    @property
    def lows(self) -> np.ndarray:
        return np.array([b.a for b in self.bases])

    @property
    def highs(self) -> np.ndarray:
        return np.array([b.b for b in self.bases])

    def _check_inside(self, X: np.ndarray) -> None:
        for k, b in enumerate(self.bases):
            col = X[:, k]
            if np.any(col < b.a) or np.any(col > b.b):
                bad = col[(col < b.a) | (col > b.b)][0]
                raise ValueError(
                    f"coordinate {bad} of dimension {k} outside [{b.a}, {b.b}]")

    def evaluate_batch(self, X: np.ndarray) -> np.ndarray:
        """Values at a batch of points, shape (n, dims) -> (n,)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dims:
            raise ValueError(f"points have {X.shape[1]} coordinates, train has {self.dims}")
        self._check_inside(X)
        v = np.ones((X.shape[0], 1))
        for k, core in enumerate(self.cores):
            W = self.bases[k].interp_matrix(X[:, k])      # (n, n_b)
            r0, nb, r1 = core.shape
            T = (W @ core.transpose(1, 0, 2).reshape(nb, r0 * r1)).reshape(-1, r0, r1)
            v = np.matmul(v[:, None, :], T)[:, 0, :]
        return v[:, 0]

    def evaluate(self, x) -> float:
        """Value at a single point."""
        return float(self.evaluate_batch(np.asarray(x, dtype=float)[None, :])[0])

    def integrate(self) -> float:
        """Exact integral of the interpolant over the box."""
        v = np.ones((1, 1))
        for k, core in enumerate(self.cores):
            w = self.bases[k].quad_weights
            v = v @ np.einsum("ajb,j->ab", core, w)
        return float(v[0, 0])

    def norm_l2(self) -> float:
        """Exact L2 norm of the interpolant over the box."""
        G = np.ones((1, 1))
        for k, core in enumerate(self.cores):
            w = self.bases[k].quad_weights
            CG = np.einsum("ajb,ac->cjb", core, G, optimize=True)
            G = np.einsum("cjb,j,cjd->bd", CG, w, core, optimize=True)
        return float(np.sqrt(max(G[0, 0], 0.0)))


def maxvol(A: np.ndarray, tol: float = 1.05, max_iters: int = 200) -> np.ndarray:
    """Row indices of an approximately maximal-volume square submatrix.

    Column-pivoted QR on the transpose seeds the index set; greedy row
    swaps then refine it until no swap increases |det| by more than
    ``tol``.
    """
    m, r = A.shape
    if m <= r:
        return np.arange(m, dtype=np.intp)
    _, _, piv = scipy.linalg.qr(A.T, pivoting=True, mode="economic")
    idx = piv[:r].copy().astype(np.intp)
    try:
        B = np.linalg.solve(A[idx].T, A.T).T
    except np.linalg.LinAlgError:
        B = np.linalg.lstsq(A[idx].T, A.T, rcond=None)[0].T
    for _ in range(max_iters):
        i, j = np.unravel_index(np.argmax(np.abs(B)), B.shape)
        if np.abs(B[i, j]) <= tol:
            break
        idx[j] = i
        bij = B[i, j]
        col_j = B[:, j].copy()
        row_i = B[i, :].copy()
        B -= np.outer(col_j, row_i) / bij
        B[:, j] = col_j / bij
    return np.sort(idx)


def _safe_prod(seq, cap: int = 1 << 20) -> int:
    p = 1
    for v in seq:
        p *= int(v)
        if p >= cap:
            return cap
    return p


class _Memo:
    """Memoized, counted batch evaluation of the target on the node grid."""

    def __init__(self, f, bases: list[Basis1D]):
        self.f = f
        self.bases = bases
        self.cache: dict[tuple, float] = {}
        self.n_evals = 0

    def points_from_indices(self, idx: np.ndarray) -> np.ndarray:
        pts = np.empty(idx.shape, dtype=float)
        for k, b in enumerate(self.bases):
            pts[:, k] = b.nodes[idx[:, k]]
        return pts

    def eval_indices(self, idx: np.ndarray) -> np.ndarray:
        """Values at node-grid multi-indices, shape (n, dims) int -> (n,)."""
        keys = [tuple(row) for row in idx]
        missing_keys = []
        seen = set()
        for key in keys:
            if key not in self.cache and key not in seen:
                missing_keys.append(key)
                seen.add(key)
        if missing_keys:
            new_idx = np.array(missing_keys, dtype=np.intp)
            pts = self.points_from_indices(new_idx)
            vals = np.asarray(self.f(pts), dtype=float).reshape(-1)
            if vals.shape[0] != pts.shape[0]:
                raise ValueError("target function returned wrong batch length")
            bad = ~np.isfinite(vals)
            if np.any(bad):
                j = int(np.argmax(bad))
                raise CrossEvaluationError(pts[j], vals[j])
            self.n_evals += pts.shape[0]
            for key, val in zip(missing_keys, vals):
                self.cache[key] = val
        return np.array([self.cache[key] for key in keys])

    def supercore(self, I_k: list[tuple], J_k: list[tuple], k: int) -> np.ndarray:
        """Target values on the cross grid I_k x nodes_k x J_k."""
        n_b = self.bases[k].degree
        rows = [pre + (j,) + suf
                for pre in I_k for j in range(n_b) for suf in J_k]
        idx = np.array(rows, dtype=np.intp)
        vals = self.eval_indices(idx)
        return vals.reshape(len(I_k), n_b, len(J_k))


def build_cross(f, bases: list[Basis1D], opts: CrossOptions | None = None,
                init_points: np.ndarray | None = None) -> TensorTrain:
    """Cross-approximate ``f`` on the box spanned by ``bases``.

    Parameters
    ----------
    f:
        Vectorized target, mapping an (n, dims) array of points to n
        values.  Must be finite on the node grid.
    bases:
        One `Basis1D` per dimension.
    opts:
        Builder options; defaults are modest and deterministic.
    init_points:
        Optional points whose nearest node multi-indices seed the pivot
        sets (useful for concentrated targets).

    Returns
    -------
    TensorTrain with a `CrossReport` attached as ``.build``.
    """
    opts = opts or CrossOptions()
    n = len(bases)
    nb = [b.degree for b in bases]
    rng = np.random.Generator(np.random.Philox(key=opts.seed))
    memo = _Memo(f, bases)

    def rank_cap(k: int) -> int:
        # r_{k+1} cannot exceed the surrounding unfolding sizes
        return max(1, min(opts.max_rank,
                          _safe_prod(nb[: k + 1]),
                          _safe_prod(nb[k + 1:])))

    def random_suffix(k: int) -> tuple:
        return tuple(int(rng.integers(0, nb[j])) for j in range(k + 1, n))

    # initial suffix sets J[k], k = 0..n-1; J[n-1] holds the empty suffix
    J: list[list[tuple]] = [[] for _ in range(n)]
    J[n - 1] = [()]
    seeds: list[tuple] = []
    if init_points is not None:
        for p in np.atleast_2d(init_points):
            seeds.append(tuple(int(np.argmin(np.abs(bases[k].nodes - p[k])))
                               for k in range(n)))
    for k in range(n - 2, -1, -1):
        want = min(opts.init_rank, rank_cap(k))
        cols: list[tuple] = []
        for s in seeds:
            suf = s[k + 1:]
            if suf not in cols and len(cols) < want:
                cols.append(suf)
        while len(cols) < want:
            cand = random_suffix(k)
            if cand not in cols:
                cols.append(cand)
        J[k] = cols

    I: list[list[tuple]] = [[()] for _ in range(n)]

    # held-out quasi-random control points, shared across sweeps
    n_holdout = 1000
    U = sobol_points(min(n, 32), n_holdout, skip=1)
    if n > 32:
        U = np.hstack([U, rng.random((n_holdout, n - 32))])
    lows = np.array([b.a for b in bases])
    highs = np.array([b.b for b in bases])
    X_ho = lows + U * (highs - lows)
    f_ho = np.asarray(f(X_ho), dtype=float).reshape(-1)
    if not np.all(np.isfinite(f_ho)):
        j = int(np.argmax(~np.isfinite(f_ho)))
        raise CrossEvaluationError(X_ho[j], f_ho[j])
    memo.n_evals += n_holdout
    f_scale = max(np.max(np.abs(f_ho)), 1e-300)

    def extract_cores() -> list[np.ndarray]:
        # Q-based interpolation cores: with A = QR and pivot rows chosen by
        # maxvol, A @ inv(A[rows]) == Q @ inv(Q[rows]) exactly, but the
        # latter stays well conditioned for targets spanning many orders
        # of magnitude.
        cores = []
        for k in range(n - 1):
            A3 = memo.supercore(I[k], J[k], k)
            A = A3.reshape(len(I[k]) * nb[k], len(J[k]))
            pos_of = {pre: i for i, pre in enumerate(I[k])}
            rows = [pos_of[p[:-1]] * nb[k] + p[-1] for p in I[k + 1]]
            Q, _ = np.linalg.qr(A)
            try:
                Ck = scipy.linalg.solve(Q[rows].T, Q.T).T
            except scipy.linalg.LinAlgError:
                Ck = np.linalg.lstsq(Q[rows].T, Q.T, rcond=None)[0].T
            cores.append(Ck.reshape(len(I[k]), nb[k], len(J[k])))
        A_last = memo.supercore(I[n - 1], J[n - 1], n - 1)
        cores.append(A_last.reshape(len(I[n - 1]), nb[n - 1], 1))
        return cores

    residual = np.inf
    prev_residual = np.inf
    converged = False
    capped = False
    sweeps_done = 0

    for sweep in range(opts.max_sweeps):
        # keep column counts within the reachable row capacity
        for k in range(n - 1):
            limit = min(len(I[k]) * nb[k], rank_cap(k))
            if len(J[k]) > limit:
                J[k] = J[k][:limit]
        # left-to-right half sweep: refine prefix sets
        for k in range(n - 1):
            A = memo.supercore(I[k], J[k], k).reshape(len(I[k]) * nb[k], len(J[k]))
            Q, _ = np.linalg.qr(A)
            piv = maxvol(Q)
            I[k + 1] = [I[k][p // nb[k]] + (p % nb[k],) for p in piv]
        # right-to-left half sweep: refine suffix sets
        for k in range(n - 1, 0, -1):
            A = memo.supercore(I[k], J[k], k)
            Amat = A.reshape(len(I[k]), nb[k] * len(J[k]))
            Q, _ = np.linalg.qr(Amat.T)
            piv = maxvol(Q)
            J[k - 1] = [(p // len(J[k]),) + J[k][p % len(J[k])] for p in piv]
        sweeps_done = sweep + 1

        tt = TensorTrain(bases=bases, cores=extract_cores())
        err_ho = np.abs(tt.evaluate_batch(X_ho) - f_ho)
        residual = float(np.max(err_ho) / f_scale)
        logger.debug("cross sweep %d: ranks=%s residual=%.3e evals=%d",
                     sweeps_done, tt.ranks, residual, memo.n_evals)
        if residual <= opts.rel_tol:
            converged = True
            break
        if opts.sample_budget is not None and memo.n_evals >= opts.sample_budget:
            logger.warning("cross sample budget reached (%d evals)", memo.n_evals)
            break
        stalled = residual > 0.5 * prev_residual
        prev_residual = residual
        if stalled and sweep < opts.max_sweeps - 1:
            # enrich columns where the held-out residual is worst, then at
            # random; both streams are deterministic for a fixed seed
            worst = np.argsort(err_ho)[::-1][:8 * opts.kick_rank]
            worst_idx = np.empty((worst.size, n), dtype=np.intp)
            for kk, b in enumerate(bases):
                worst_idx[:, kk] = np.argmin(
                    np.abs(X_ho[worst][:, kk, None] - b.nodes[None, :]), axis=1)
            grown = False
            for k in range(n - 1):
                cap = min(rank_cap(k), len(I[k]) * nb[k])
                cols = list(J[k])
                target = min(cap, len(J[k]) + opts.kick_rank)
                for row in worst_idx:
                    if len(cols) >= target:
                        break
                    cand = tuple(int(v) for v in row[k + 1:])
                    if cand not in cols:
                        cols.append(cand)
                attempts = 0
                while len(cols) < target and attempts < 64:
                    cand = random_suffix(k)
                    if cand not in cols:
                        cols.append(cand)
                    attempts += 1
                if len(cols) > len(J[k]):
                    J[k] = cols
                    grown = True
            if not grown:
                capped = True

    if not converged:
        capped = capped or any(len(J[k]) >= rank_cap(k) for k in range(n - 1))
        logger.warning("cross did not converge: residual %.3e > tol %.3e after "
                       "%d sweeps (rank capped: %s)", residual, opts.rel_tol,
                       sweeps_done, capped)

    tt = TensorTrain(bases=bases, cores=extract_cores())
    tt.build = CrossReport(converged=converged, residual=residual,
                           n_evals=memo.n_evals, sweeps=sweeps_done,
                           rank_capped=capped)
    return tt


def tt_round(tt: TensorTrain, rel_tol: float) -> TensorTrain:
    """Rank truncation with L2 control over the box.

    Right-to-left orthogonalization followed by left-to-right singular
    value truncation; the cut keeps the total L2 change below
    ``rel_tol * ||tt||``.  Node-value cores are scaled by the square
    roots of the quadrature weights so Frobenius norms match function
    L2 norms exactly.
    """
    n = tt.dims
    sw = [np.sqrt(b.quad_weights) for b in tt.bases]
    cores = [c * sw[k][None, :, None] for k, c in enumerate(tt.cores)]

    for k in range(n - 1, 0, -1):
        r0, m, r1 = cores[k].shape
        Q, R = np.linalg.qr(cores[k].reshape(r0, m * r1).T)
        rnew = Q.shape[1]
        cores[k] = Q.T.reshape(rnew, m, r1)
        cores[k - 1] = np.einsum("ajb,cb->ajc", cores[k - 1], R)

    norm = np.linalg.norm(cores[0])
    if norm > 0.0:
        delta = rel_tol * norm / max(np.sqrt(n - 1), 1.0)
        for k in range(n - 1):
            r0, m, r1 = cores[k].shape
            U, s, Vt = np.linalg.svd(cores[k].reshape(r0 * m, r1),
                                     full_matrices=False)
            if s.size > 1:
                tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]
                keep = s.size
                for r in range(1, s.size):
                    if tail[r] <= delta:
                        keep = r
                        break
            else:
                keep = 1
            cores[k] = U[:, :keep].reshape(r0, m, keep)
            carry = s[:keep, None] * Vt[:keep]
            cores[k + 1] = np.einsum("ab,bjc->ajc", carry, cores[k + 1])

    out = [c / sw[k][None, :, None] for k, c in enumerate(cores)]
    return TensorTrain(bases=tt.bases, cores=out)
