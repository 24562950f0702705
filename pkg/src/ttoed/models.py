"""Built-in inverse problems: SEIR observation timing and a 1D sensor toy.

The SEIR model tracks susceptible/exposed/infected/removed compartments
with smoothly switching infection and mortality rates, plus an auxiliary
cumulative-deceased compartment that provides the second observable.  The
sensor toy is a linear-Gaussian source-recovery problem on an interval
with a fully closed-form posterior, used as the oracle for the criterion
estimators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as ttrng
from .odesolve import DenseSolution, solve_dp54

# -- SEIR disease model ---------------------------------------------------

SEIR_TAU = 2.1
SEIR_T_FINAL = 4.0
SEIR_STATE0 = np.array([99.0, 1.0, 0.0, 0.0, 0.0])   # S, E, I, R, Dd
SEIR_SIGMA_I = 2.0
SEIR_SIGMA_D = 1.0
SEIR_M_TRUE = np.array([0.4, 0.3, 0.3, 0.1, 0.15, 0.6])


@dataclass(frozen=True)
class SeirParams:
    """Rate vector and fixed experiment constants."""

    m: np.ndarray                      # [beta1, alpha, gamma_r, gamma_d1, beta2, gamma_d2]
    tau: float = SEIR_TAU
    t_final: float = SEIR_T_FINAL

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.shape != (6,):
            raise ValueError("SEIR rate vector must have 6 entries")
        if not 0.0 < self.tau < self.t_final:
            raise ValueError("transition time must lie inside (0, t_final)")
        object.__setattr__(self, "m", m)


def seir_interval_starts(n_intervals: int = 4) -> np.ndarray:
    """Left endpoints 1, 1.5, 2, ... of the observation subintervals."""
    return 1.0 + 0.5 * np.arange(n_intervals + 1)


def _rates(t: float, M: np.ndarray, tau: float):
    s = 0.5 * np.tanh(7.0 * (t - tau))
    beta = M[:, 0] + s * (M[:, 4] - M[:, 0])
    gamma_d = M[:, 3] + s * (M[:, 5] - M[:, 3])
    return beta, gamma_d


def seir_rhs(t: float, state: np.ndarray, m: np.ndarray,
             tau: float = SEIR_TAU) -> np.ndarray:
    """Time derivative of (S, E, I, R, Dd) for one parameter vector."""
    return seir_rhs_batch(t, np.atleast_2d(state), np.atleast_2d(m), tau)[0]


def seir_rhs_batch(t: float, Y: np.ndarray, M: np.ndarray,
                   tau: float = SEIR_TAU) -> np.ndarray:
    """Vectorized right-hand side over a batch of states and rates."""
    beta, gamma_d = _rates(t, M, tau)
    alpha = M[:, 1]
    gamma_r = M[:, 2]
    S, E, I = Y[:, 0], Y[:, 1], Y[:, 2]
    out = np.empty_like(Y)
    flow = beta * S * I
    removal = (gamma_r + gamma_d) * I
    out[:, 0] = -flow
    out[:, 1] = flow - alpha * E
    out[:, 2] = alpha * E - removal
    out[:, 3] = removal
    out[:, 4] = gamma_d * I
    return out


class SeirSolveCounter:
    """Counts full ODE solves (one per parameter vector per integration)."""

    def __init__(self):
        self.count = 0


def seir_dense_solve(M: np.ndarray, rtol: float = 1e-6, atol: float = 1e-8,
                     tau: float = SEIR_TAU, t_final: float = SEIR_T_FINAL,
                     counter: SeirSolveCounter | None = None) -> DenseSolution:
    """Integrate a batch of rate vectors over [0, t_final]."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if counter is not None:
        counter.count += M.shape[0]
    Y0 = np.tile(SEIR_STATE0, (M.shape[0], 1))
    return solve_dp54(lambda t, Y: seir_rhs_batch(t, Y, M, tau),
                      (0.0, t_final), Y0, rtol=rtol, atol=atol)


def seir_solve(m: np.ndarray, t_obs, rtol: float = 1e-6,
               atol: float = 1e-8) -> np.ndarray:
    """Observables (I, Dd) of one rate vector at the requested times.

    Returns an array of shape (len(t_obs), 2).
    """
    t_obs = np.atleast_1d(np.asarray(t_obs, dtype=float))
    sol = seir_dense_solve(np.atleast_2d(m), rtol=rtol, atol=atol)
    states = sol.eval(t_obs, rows=np.zeros(t_obs.size, dtype=np.intp))
    return states[:, [2, 4]]


def seir_observe_batch(E: np.ndarray, M: np.ndarray, rtol: float = 1e-6,
                       atol: float = 1e-8,
                       counter: SeirSolveCounter | None = None) -> np.ndarray:
    """Batched observables for per-row observation times.

    ``E`` holds one or more observation times per row; the output
    interleaves (I, Dd) per time: shape (n, 2 * n_times).
    """
    E = np.atleast_2d(np.asarray(E, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n, n_times = E.shape
    sol = seir_dense_solve(M, rtol=rtol, atol=atol, counter=counter)
    out = np.empty((n, 2 * n_times))
    rows = np.arange(n, dtype=np.intp)
    for j in range(n_times):
        states = sol.eval(E[:, j], rows=rows)
        out[:, 2 * j] = states[:, 2]
        out[:, 2 * j + 1] = states[:, 4]
    return out


# -- 1D Poisson sensor toy -------------------------------------------------

@dataclass(frozen=True)
class PoissonToy:
    """Source recovery on (0, 2*pi) from point measurements of the state.

    The state solves ``-u'' = m1 sin(4x/3) + m2 cos(2x)`` with constant
    Dirichlet data at both ends; the solution is linear in ``m`` so the
    posterior is Gaussian and all design criteria have closed forms.
    """

    u_left: float = 1.0
    u_right: float = -1.0
    sigma_d: float = 0.1
    length: float = 2.0 * np.pi

    def state_parts(self, x: np.ndarray):
        """Affine decomposition u = J(x) @ m + b(x)."""
        x = np.asarray(x, dtype=float)
        L = self.length
        j1 = (9.0 / 16.0) * np.sin(4.0 * x / 3.0) \
            - (9.0 * np.sqrt(3.0) / 32.0) * (x / L)
        j2 = 0.25 * np.cos(2.0 * x) - 0.25
        b = self.u_left + (self.u_right - self.u_left) * (x / L)
        return j1, j2, b

    def observe(self, e, m) -> np.ndarray:
        """State values at sensor location(s) for one parameter vector."""
        e = np.atleast_1d(np.asarray(e, dtype=float))
        if np.any(e <= 0.0) or np.any(e >= self.length):
            raise ValueError(f"sensor location outside (0, {self.length})")
        j1, j2, b = self.state_parts(e)
        m = np.asarray(m, dtype=float)
        return j1 * m[0] + j2 * m[1] + b

    def observe_batch(self, E: np.ndarray, M: np.ndarray) -> np.ndarray:
        """Per-row sensor locations and parameters, shape (n, k) each way."""
        E = np.atleast_2d(np.asarray(E, dtype=float))
        M = np.atleast_2d(np.asarray(M, dtype=float))
        j1, j2, b = self.state_parts(E)
        return j1 * M[:, [0]] + j2 * M[:, [1]] + b

    def jacobian(self, e) -> np.ndarray:
        """Design-to-observable Jacobian of shape (n_obs, 2)."""
        e = np.atleast_1d(np.asarray(e, dtype=float))
        j1, j2, _ = self.state_parts(e)
        return np.column_stack([j1, j2])


def linear_gaussian_oracles(toy: PoissonToy, e, sigma: float | None = None,
                            prior_cov: np.ndarray | None = None):
    """Closed-form EIG, posterior trace and covariance for the toy.

    With Jacobian J and noise level sigma, the Gaussian posterior has
    ``C_post = (C_pr^-1 + J^T J / sigma^2)^-1`` and the expected
    information gain is ``0.5 log det(I + J C_pr J^T / sigma^2)``,
    independent of the realized data.
    """
    sigma = toy.sigma_d if sigma is None else float(sigma)
    C_pr = np.eye(2) if prior_cov is None else np.asarray(prior_cov, dtype=float)
    J = toy.jacobian(e)
    S = np.eye(J.shape[0]) + (J @ C_pr @ J.T) / sigma ** 2
    eig = 0.5 * np.log(np.linalg.det(S))
    C_post = np.linalg.inv(np.linalg.inv(C_pr) + (J.T @ J) / sigma ** 2)
    C_post = 0.5 * (C_post + C_post.T)
    return float(eig), float(np.trace(C_post)), C_post


# -- problem factories -------------------------------------------------------

def make_poisson_problem(sigma_d: float = 0.1, e_margin: float = 0.1,
                         u_left: float = 1.0, u_right: float = -1.0) -> "DesignProblem":
    """Sensor-placement problem for the 1D source toy.

    One sensor location over the interior of (0, 2*pi), one observation,
    standard normal prior on the two source coefficients.  Carries the
    closed-form criterion oracle.
    """
    from .problem import DesignProblem
    from .reference import gaussian_variable, uniform_variable

    toy = PoissonToy(u_left=u_left, u_right=u_right, sigma_d=sigma_d)
    e_lo, e_hi = e_margin, toy.length - e_margin
    e_vars = [uniform_variable(e_lo, e_hi)]
    m_vars = [gaussian_variable(0.0, 1.0), gaussian_variable(0.0, 1.0)]

    # data bounds: sweep the state range over the design box and the
    # boxed prior, pad by several noise levels
    e_grid = np.linspace(e_lo, e_hi, 512)
    J = toy.jacobian(e_grid)
    _, _, b = toy.state_parts(e_grid)
    reach = 4.0 * np.sum(np.abs(J), axis=1)
    d_lo = float(np.min(b - reach) - 6.0 * sigma_d)
    d_hi = float(np.max(b + reach) + 6.0 * sigma_d)
    d_vars = [uniform_variable(d_lo, d_hi)]

    problem = DesignProblem(
        name="poisson-toy",
        e_vars=e_vars, d_vars=d_vars, m_vars=m_vars,
        pto=lambda E, M: toy.observe_batch(E, M),
        noise_std=lambda E: np.full((np.atleast_2d(E).shape[0], 1), sigma_d),
        prior_logpdf=lambda M: -0.5 * np.sum(np.atleast_2d(M) ** 2, axis=1)
        - np.log(2.0 * np.pi),
        oracle=lambda e: linear_gaussian_oracles(toy, e, sigma=sigma_d),
    )
    problem.toy = toy
    return problem


def _seir_stage_bounds(intervals: list[tuple[float, float]], rtol: float,
                       n_samples: int = 512) -> list[list[tuple[float, float]]]:
    """Observable ranges per stage interval over the prior box."""
    gen = ttrng.stream(1234, 0x5E17)
    M = gen.random((n_samples, 6))
    sol = seir_dense_solve(M, rtol=rtol)
    out = []
    for lo, hi in intervals:
        ts = np.linspace(lo, hi, 9)
        i_vals, d_vals = [], []
        for t in ts:
            states = sol.eval(np.full(n_samples, t), rows=np.arange(n_samples))
            i_vals.append(states[:, 2])
            d_vals.append(states[:, 4])
        i_all = np.concatenate(i_vals)
        d_all = np.concatenate(d_vals)
        pad_i, pad_d = 6.0 * SEIR_SIGMA_I, 6.0 * SEIR_SIGMA_D
        out.append([(float(i_all.min() - pad_i), float(i_all.max() + pad_i)),
                    (float(d_all.min() - pad_d), float(d_all.max() + pad_d))])
    return out


def make_seir_problem(n_intervals: int = 4, designs_per_stage: int = 1,
                      rtol: float = 1e-6) -> "DesignProblem":
    """Observation-time design for the SEIR model.

    The design window [1, 3] splits into half-unit subintervals; each
    stage chooses ``designs_per_stage`` consecutive observation times, one
    per subinterval, and measures infected and cumulative-deceased counts
    with independent Gaussian noise.  The parent problem covers all
    intervals at once (batch mode); ``stages`` holds the sequential view.
    """
    from .problem import DesignProblem, EvalCounter
    from .reference import uniform_variable

    if n_intervals % designs_per_stage:
        raise ValueError("designs_per_stage must divide the interval count")
    starts = seir_interval_starts(n_intervals)
    intervals = [(float(starts[i]), float(starts[i + 1])) for i in range(n_intervals)]
    bounds = _seir_stage_bounds(intervals, rtol)

    m_vars = [uniform_variable(0.0, 1.0) for _ in range(6)]
    prior_logpdf = lambda M: np.zeros(np.atleast_2d(M).shape[0])
    counter = EvalCounter()

    def make_noise(n_times):
        sig = np.array([SEIR_SIGMA_I, SEIR_SIGMA_D] * n_times)

        def noise_std(E):
            return np.tile(sig, (np.atleast_2d(E).shape[0], 1))
        return noise_std

    def make_pto():
        def pto(E, M):
            return seir_observe_batch(E, M, rtol=rtol)
        return pto

    full = DesignProblem(
        name="seir",
        e_vars=[uniform_variable(lo, hi) for lo, hi in intervals],
        d_vars=[uniform_variable(lo, hi)
                for pair in bounds for lo, hi in pair],
        m_vars=m_vars,
        pto=make_pto(),
        noise_std=make_noise(n_intervals),
        prior_logpdf=prior_logpdf,
        counter=counter,
    )

    stages = []
    n_stages = n_intervals // designs_per_stage
    for k in range(n_stages):
        sel = range(k * designs_per_stage, (k + 1) * designs_per_stage)
        stage = DesignProblem(
            name=f"seir-stage{k}",
            e_vars=[uniform_variable(*intervals[i]) for i in sel],
            d_vars=[uniform_variable(lo, hi)
                    for i in sel for lo, hi in bounds[i]],
            m_vars=m_vars,
            pto=make_pto(),
            noise_std=make_noise(designs_per_stage),
            prior_logpdf=prior_logpdf,
            counter=counter,
        )
        stages.append(stage)
    full.stages = stages
    full.m_true_default = SEIR_M_TRUE.copy()
    return full


MODEL_REGISTRY = {
    "poisson-toy": make_poisson_problem,
    "seir": make_seir_problem,
}


def make_problem(name: str, **kwargs) -> "DesignProblem":
    """Instantiate a registered problem by name."""
    if name not in MODEL_REGISTRY:
        raise KeyError(f"unknown model {name!r}; known: {sorted(MODEL_REGISTRY)}")
    return MODEL_REGISTRY[name](**kwargs)


# -- synthetic data ---------------------------------------------------------

def synthesize_data(pto, e: np.ndarray, m_true: np.ndarray, sigma: np.ndarray,
                    seed: int, stage: int = 0) -> np.ndarray:
    """Noisy observation of the truth, reproducible from (seed, stage).

    The noise draw comes from a counter-based stream keyed by the seed,
    the stage index, and the component index, so shared-seed studies see
    identical noise regardless of the design.
    """
    e = np.atleast_1d(np.asarray(e, dtype=float))
    m_true = np.asarray(m_true, dtype=float)
    clean = np.asarray(pto(e[None, :], m_true[None, :]), dtype=float).reshape(-1)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), clean.shape)
    zeta = np.array([ttrng.normal(seed, 0xDA7A, stage, comp, size=1)[0]
                     for comp in range(clean.size)])
    return clean + sigma * zeta
