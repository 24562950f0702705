"""Hot numerical loops, compiled with numba when available.

The conditional-CDF inversion dominates every transport operation; the
kernels here run the bracketing bisection and Newton polish per sample
with scalar Legendre Clenshaw evaluations.  A pure-numpy fallback with
identical arithmetic keeps the package functional without numba.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:     # pragma: no cover - numba is a hard dep in practice
    HAVE_NUMBA = False

    prange = range

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn
        return deco

_SQRT1_2 = 1.0 / math.sqrt(2.0)

KIND_UNIFORM = 0
KIND_TRUNCGAUSS = 1


@njit(cache=True, fastmath=True)
def _legval_scalar(c, t):
    """Clenshaw evaluation of a Legendre series at one point."""
    m = c.shape[0]
    if m == 1:
        return c[0]
    c0 = c[m - 2]
    c1 = c[m - 1]
    nd = m
    for i in range(3, m + 1):
        tmp = c0
        nd -= 1
        c0 = c[m - i] - (c1 * (nd - 1)) / nd
        c1 = tmp + (c1 * t * (2 * nd - 1)) / nd
    return c0 + c1 * t


@njit(cache=True, fastmath=True)
def _ref_cdf_scalar(x, a, b, kind, mu, sigma, zlo, mass):
    if kind == KIND_UNIFORM:
        return (x - a) / (b - a)
    z = (x - mu) / sigma
    phi = 0.5 * (1.0 + math.erf(z * _SQRT1_2))
    return (phi - zlo) / mass


@njit(cache=True, fastmath=True)
def _ref_pdf_scalar(x, a, b, kind, mu, sigma, zlo, mass):
    if kind == KIND_UNIFORM:
        return 1.0 / (b - a)
    z = (x - mu) / sigma
    return math.exp(-0.5 * z * z) / (sigma * mass * math.sqrt(2.0 * math.pi))


@njit(cache=True, fastmath=True)
def _cdf_scalar(cdf_c, defw, x, a, b, kind, mu, sigma, zlo, mass):
    t = 2.0 * (x - a) / (b - a) - 1.0
    val = _legval_scalar(cdf_c, t)
    if val < 0.0:
        val = 0.0
    if defw > 0.0:
        val += defw * _ref_cdf_scalar(x, a, b, kind, mu, sigma, zlo, mass)
    return val


@njit(cache=True, fastmath=True)
def _pdf_scalar(pdf_c, defw, x, a, b, kind, mu, sigma, zlo, mass):
    t = 2.0 * (x - a) / (b - a) - 1.0
    val = _legval_scalar(pdf_c, t)
    if val < 0.0:
        val = 0.0
    if defw > 0.0:
        val += defw * _ref_pdf_scalar(x, a, b, kind, mu, sigma, zlo, mass)
    return val


@njit(cache=True, parallel=True, fastmath=True)
def invert_cdf_kernel(cdf_c, pdf_c, defw, u, denom, a, b, kind, mu, sigma,
                      zlo, mass, n_bisect, n_newton):
    """Per-sample monotone CDF inversion on [a, b].

    ``cdf_c``/``pdf_c`` hold one Legendre coefficient row per sample
    (shape (n, m)); ``u`` are quantiles in [0, 1]; ``denom`` the CDF
    totals.  Bisection brackets to a narrow interval, safeguarded Newton
    steps polish to solver precision.
    """
    n = u.shape[0]
    out = np.empty(n)
    for i in prange(n):
        tgt = u[i] * denom[i]
        lo = a
        hi = b
        for _ in range(n_bisect):
            mid = 0.5 * (lo + hi)
            F = _cdf_scalar(cdf_c[i], defw[i], mid, a, b, kind, mu, sigma, zlo, mass)
            if F > tgt:
                hi = mid
            else:
                lo = mid
        x = 0.5 * (lo + hi)
        for _ in range(n_newton):
            F = _cdf_scalar(cdf_c[i], defw[i], x, a, b, kind, mu, sigma, zlo, mass) - tgt
            if F > 0.0:
                hi = x
            else:
                lo = x
            slope = _pdf_scalar(pdf_c[i], defw[i], x, a, b, kind, mu, sigma, zlo, mass)
            if slope > 0.0:
                x_new = x - F / slope
            else:
                x_new = 0.5 * (lo + hi)
            if not (lo <= x_new <= hi) or not math.isfinite(x_new):
                x_new = 0.5 * (lo + hi)
            x = x_new
        if x < a:
            x = a
        elif x > b:
            x = b
        out[i] = x
    return out


@njit(cache=True, parallel=True, fastmath=True)
def eval_cdf_kernel(cdf_c, defw, x, a, b, kind, mu, sigma, zlo, mass):
    """Per-sample CDF values at given points."""
    n = x.shape[0]
    out = np.empty(n)
    for i in prange(n):
        out[i] = _cdf_scalar(cdf_c[i], defw[i], x[i], a, b, kind, mu, sigma, zlo, mass)
    return out


@njit(cache=True, parallel=True, fastmath=True)
def eval_pdf_kernel(pdf_c, defw, x, a, b, kind, mu, sigma, zlo, mass):
    """Per-sample pdf values at given points."""
    n = x.shape[0]
    out = np.empty(n)
    for i in prange(n):
        out[i] = _pdf_scalar(pdf_c[i], defw[i], x[i], a, b, kind, mu, sigma, zlo, mass)
    return out
