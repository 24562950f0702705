"""One-dimensional Lagrange bases on Gauss-Legendre nodes.

Each dimension of a tensor-train surrogate carries a `Basis1D`: a set of
Gauss-Legendre nodes on an interval, the matching quadrature weights, and
precomputed machinery for barycentric interpolation and for exact
integration of polynomials built from products of basis functions (as
needed by marginalization and CDF construction).

For a degree-``n`` Gauss-Legendre rule the quadrature integrates
polynomials up to degree ``2n - 1`` exactly, so products of two cardinal
functions (degree ``2n - 2``) integrate exactly and the mass matrix is
diagonal with the quadrature weights on the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg


def gauss_legendre(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [a, b]."""
    t, w = npleg.leggauss(n)
    nodes = 0.5 * (b - a) * (t + 1.0) + a
    weights = 0.5 * (b - a) * w
    return nodes, weights


def barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    """Barycentric weights w_i = 1 / prod_{j != i} (x_i - x_j), rescaled.

    Rescaling by the maximum magnitude avoids overflow for larger node
    counts; the barycentric formula is invariant under common scaling.
    """
    n = nodes.size
    w = np.ones(n)
    for i in range(n):
        diff = nodes[i] - np.delete(nodes, i)
        w[i] = 1.0 / np.prod(diff)
    return w / np.max(np.abs(w))


def _legendre_int_matrix(ncoef: int) -> np.ndarray:
    """Matrix mapping Legendre coefficients to antiderivative coefficients.

    Works on [-1, 1] with the convention that the antiderivative vanishes
    at t = -1.  Output has one more coefficient than the input.
    """
    A = np.zeros((ncoef + 1, ncoef))
    for l in range(ncoef):
        if l == 0:
            A[1, 0] += 1.0  # int P_0 = P_1, plus constant fixed below
        else:
            A[l + 1, l] += 1.0 / (2 * l + 1)
            A[l - 1, l] -= 1.0 / (2 * l + 1)
    # subtract value at t = -1 (P_l(-1) = (-1)^l) so F(-1) = 0
    signs = np.array([(-1.0) ** l for l in range(ncoef + 1)])
    A[0, :] -= signs @ A
    return A


@dataclass
class Basis1D:
    """Lagrange basis on Gauss-Legendre nodes over ``[a, b]``.

    Attributes
    ----------
    interval:
        The pair ``(a, b)`` with ``a < b``.
    degree:
        Number of interpolation nodes ``n_b``.
    nodes:
        Strictly increasing Gauss-Legendre nodes inside ``(a, b)``.
    quad_weights:
        Positive quadrature weights summing to ``b - a``.
    mass:
        The exact mass matrix ``\\int phi_i phi_j`` (diagonal for this
        node/weight pairing).
    """

    interval: tuple[float, float]
    degree: int
    nodes: np.ndarray
    quad_weights: np.ndarray
    mass: np.ndarray
    _bary: np.ndarray = field(repr=False, default=None)
    _cdf_nodes: np.ndarray = field(repr=False, default=None)
    _cdf_quad_t: np.ndarray = field(repr=False, default=None)
    _proj: np.ndarray = field(repr=False, default=None)
    _aint: np.ndarray = field(repr=False, default=None)
    _interp_to_cdf: np.ndarray = field(repr=False, default=None)

    @property
    def a(self) -> float:
        return self.interval[0]

    @property
    def b(self) -> float:
        return self.interval[1]

    @property
    def width(self) -> float:
        return self.interval[1] - self.interval[0]

    @property
    def cdf_nodes(self) -> np.ndarray:
        """Finer Gauss-Legendre grid used for exact CDF construction."""
        return self._cdf_nodes

    @property
    def interp_to_cdf(self) -> np.ndarray:
        """Cardinal-function values at the CDF grid, shape (n_cdf, n_b)."""
        return self._interp_to_cdf

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        """Map [a, b] to the Legendre reference interval [-1, 1]."""
        return 2.0 * (np.asarray(x) - self.a) / self.width - 1.0

    def interp_matrix(self, x: np.ndarray) -> np.ndarray:
        """Cardinal-function values at arbitrary points.

        Parameters
        ----------
        x:
            Points in ``[a, b]``, shape ``(n,)``.

        Returns
        -------
        ndarray of shape ``(n, n_b)`` with row i holding ``phi_j(x_i)``.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        diff = x[:, None] - self.nodes[None, :]
        exact = np.isclose(diff, 0.0, atol=1e-14)
        diff_safe = np.where(exact, 1.0, diff)
        terms = self._bary[None, :] / diff_safe
        out = terms / np.sum(terms, axis=1, keepdims=True)
        hit = exact.any(axis=1)
        if np.any(hit):
            out[hit] = exact[hit].astype(float)
        return out

    def integrate_values(self, values: np.ndarray) -> np.ndarray:
        """Integrate a function from its node values (exact to degree 2n-1)."""
        return np.tensordot(values, self.quad_weights, axes=([-1], [0]))

    # -- exact polynomial CDF machinery ---------------------------------

    def pdf_coeffs(self, q_at_cdf_nodes: np.ndarray) -> np.ndarray:
        """Legendre coefficients of a polynomial from values at cdf nodes.

        The input polynomial must have degree <= n_cdf - 2 (products of
        two core interpolants qualify).  Shape ``(n, n_cdf)`` in,
        ``(n_cdf, n)`` out (coefficient-major for ``legval``).
        """
        return self._proj @ q_at_cdf_nodes.T

    def cdf_coeffs(self, pdf_c: np.ndarray) -> np.ndarray:
        """Antiderivative coefficients; zero at the left endpoint.

        Includes the ``dx = (b - a)/2 dt`` measure factor so the result
        is a CDF in the x variable.
        """
        return (self._aint @ pdf_c) * (0.5 * self.width)

    def eval_series(self, coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Evaluate per-sample Legendre series at per-sample points.

        ``coeffs`` has shape ``(ncoef, n)``; ``x`` has shape ``(n,)``.
        """
        return npleg.legval(self.to_unit(x), coeffs, tensor=False)


def make_basis(n_b: int, a: float, b: float) -> Basis1D:
    """Construct a Gauss-Legendre Lagrange basis with ``n_b`` nodes."""
    if n_b < 2:
        raise ValueError(f"basis degree must be >= 2, got {n_b}")
    if not (np.isfinite(a) and np.isfinite(b) and a < b):
        raise ValueError(f"invalid interval [{a}, {b}]")
    nodes, weights = gauss_legendre(n_b, a, b)
    mass = np.diag(weights)

    n_cdf = 2 * n_b
    t_cdf, w_cdf = npleg.leggauss(n_cdf)
    cdf_nodes = 0.5 * (b - a) * (t_cdf + 1.0) + a

    # projection onto Legendre coefficients: c_l = (2l+1)/2 sum w_j q_j P_l(t_j)
    P = npleg.legvander(t_cdf, n_cdf - 1)  # (n_cdf, n_cdf)
    scale = (2.0 * np.arange(n_cdf) + 1.0) / 2.0
    proj = scale[:, None] * (P.T * w_cdf[None, :])

    basis = Basis1D(
        interval=(float(a), float(b)),
        degree=n_b,
        nodes=nodes,
        quad_weights=weights,
        mass=mass,
    )
    basis._bary = barycentric_weights(nodes)
    basis._cdf_nodes = cdf_nodes
    basis._cdf_quad_t = w_cdf
    basis._proj = proj
    basis._aint = _legendre_int_matrix(n_cdf)
    basis._interp_to_cdf = basis.interp_matrix(cdf_nodes)
    return basis


def make_bases(n_b: int | list[int], lows, highs) -> list[Basis1D]:
    """Construct one basis per variable over the given box."""
    lows = np.atleast_1d(np.asarray(lows, dtype=float))
    highs = np.atleast_1d(np.asarray(highs, dtype=float))
    if lows.shape != highs.shape:
        raise ValueError("lows/highs shape mismatch")
    if np.isscalar(n_b) or isinstance(n_b, (int, np.integer)):
        n_b = [int(n_b)] * lows.size
    return [make_basis(nb, lo, hi) for nb, lo, hi in zip(n_b, lows, highs)]
