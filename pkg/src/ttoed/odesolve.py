"""Batched adaptive Dormand-Prince 5(4) integration with dense output.

Integrates a whole batch of initial-value problems simultaneously with a
shared adaptive step sequence; the error control takes the worst scaled
norm over the batch, so every member meets the tolerance.  Dense output
uses the standard quartic interpolant of the 5(4) pair.
"""

from __future__ import annotations

import numpy as np

_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200,
               22 / 525, -1 / 40])
# quartic dense-output coefficients of the 5(4) pair
_P = np.array([
    [1.0, -2.8535800653862835, 3.0717434641059005, -1.1270175653862835],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 4.023133379230305, -6.249321565289, 2.675424484351598],
    [0.0, -3.7324019615885042, 10.068970589843675, -5.685526961588504],
    [0.0, 2.5548038301849423, -6.399112377351017, 3.5219323679207912],
    [0.0, -1.3744241142186024, 3.272657752246729, -1.7672812570757455],
    [0.0, 1.3824689317781436, -3.764937863556287, 2.382468931778144],
])


class StepSizeError(RuntimeError):
    """Raised when the controller underflows the minimum step size."""


class DenseSolution:
    """Piecewise quartic interpolant of a batched integration."""

    def __init__(self, t_grid: np.ndarray, h_grid: np.ndarray,
                 y_grid: np.ndarray, Q: np.ndarray):
        self.t_grid = t_grid        # (n_steps + 1,)
        self.h_grid = h_grid        # (n_steps,)
        self.y_grid = y_grid        # (n_steps + 1, n_batch, n_state)
        self.Q = Q                  # (n_steps, n_batch, n_state, 4)

    def eval(self, t: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        """States at requested times.

        Parameters
        ----------
        t:
            Times inside the integration span, shape (m,).
        rows:
            Batch row per request (defaults to broadcasting all rows).

        Returns
        -------
        (m, n_state) if rows given, else (m, n_batch, n_state).
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip(np.searchsorted(self.t_grid, t, side="right") - 1,
                      0, len(self.h_grid) - 1)
        theta = (t - self.t_grid[idx]) / self.h_grid[idx]
        powers = np.stack([theta ** (j + 1) for j in range(4)], axis=-1)  # (m, 4)
        if rows is None:
            interp = np.einsum("mbsj,mj->mbs", self.Q[idx], powers)
            return self.y_grid[idx] + self.h_grid[idx][:, None, None] * interp
        interp = np.einsum("msj,mj->ms", self.Q[idx, rows], powers)
        return self.y_grid[idx, rows] + self.h_grid[idx][:, None] * interp


def solve_dp54(rhs, t_span: tuple[float, float], y0: np.ndarray,
               rtol: float = 1e-6, atol: float = 1e-8,
               max_steps: int = 100_000) -> DenseSolution:
    """Integrate ``dy/dt = rhs(t, y)`` for a batch of initial states.

    Parameters
    ----------
    rhs:
        Vectorized right-hand side, (t, (n_batch, n_state)) -> same shape.
    t_span:
        Increasing pair (t0, t1).
    y0:
        Initial states, shape (n_batch, n_state).
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    y = np.atleast_2d(np.asarray(y0, dtype=float)).copy()
    span = t1 - t0
    min_step = 1e-12 * span

    ts = [t0]
    hs: list[float] = []
    ys = [y.copy()]
    Qs: list[np.ndarray] = []

    t = t0
    f = rhs(t, y)
    # modest initial guess; the controller adapts within a few steps
    h = span / 100.0

    K = np.empty((7,) + y.shape)
    steps = 0
    while t < t1:
        if steps >= max_steps:
            raise StepSizeError(f"exceeded {max_steps} steps")
        h = min(h, t1 - t)
        if h < min_step:
            raise StepSizeError(f"step size underflow at t={t}")
        K[0] = f
        for i in range(1, 6):
            yi = y + h * np.tensordot(_A[i, :i], K[:i], axes=(0, 0))
            K[i] = rhs(t + _C[i] * h, yi)
        y_new = y + h * np.tensordot(_B, K[:6], axes=(0, 0))
        f_new = rhs(t + h, y_new)
        K[6] = f_new
        err = h * np.tensordot(_E, K, axes=(0, 0))
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        norms = np.sqrt(np.mean((err / scale) ** 2, axis=1))
        err_norm = float(np.max(norms))
        if err_norm <= 1.0:
            # accept; record the dense-output polynomial for the step
            Q = np.einsum("ibs,ij->bsj", K, _P)
            ts.append(t + h)
            hs.append(h)
            ys.append(y_new.copy())
            Qs.append(Q)
            t += h
            y = y_new
            f = f_new
            factor = 10.0 if err_norm == 0.0 else min(10.0, 0.9 * err_norm ** -0.2)
            h *= factor
        else:
            h *= max(0.2, 0.9 * err_norm ** -0.2)
        steps += 1

    return DenseSolution(np.array(ts), np.array(hs), np.stack(ys), np.stack(Qs))


def solve_rk4_fixed(rhs, t_span: tuple[float, float], y0: np.ndarray,
                    h: float) -> np.ndarray:
    """Classic fixed-step RK4; reference integrator for accuracy checks."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    y = np.atleast_2d(np.asarray(y0, dtype=float)).copy()
    n = int(np.ceil((t1 - t0) / h))
    h = (t1 - t0) / n
    t = t0
    for _ in range(n):
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y
