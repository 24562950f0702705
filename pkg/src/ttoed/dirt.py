"""Deep composition of transport layers over a bridging schedule.

`build_dirt` stacks SIRT layers so that the composite pushes the product
reference forward to an unnormalized target density on the box. Each new
layer approximates the pullback of the current bridging density through
the composite built so far; bridging densities follow a tempering
schedule, either fixed or chosen adaptively from importance-weight
effective sample sizes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .basis import Basis1D, make_bases
from .ftt import CrossOptions, build_cross
from .reference import Reference, VariableSpec, uniform_variable
from .rng import stream
from .sirt import SirtMap, TriangularPoint, build_sirt
from .sobol import sobol_points

logger = logging.getLogger(__name__)


class ScheduleError(RuntimeError):
    """Raised when no admissible tempering step exists."""


class LayerAccuracyError(RuntimeError):
    """Raised when a layer misses its Hellinger contract by a wide margin."""

    def __init__(self, layer: int, achieved: float, limit: float):
        self.layer = layer
        super().__init__(
            f"layer {layer} Hellinger estimate {achieved:.3g} exceeds {limit:.3g}; "
            "the bridging schedule is too aggressive for the rank budget")


@dataclass
class BridgingSchedule:
    """Tempering plan between the reference and the target."""

    kind: str = "tempered-ratio"   # tempered-ratio | tempered-likelihood | explicit-list
    betas: tuple[float, ...] | None = None
    adaptive: bool = True
    ess_threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("tempered-ratio", "tempered-likelihood", "explicit-list"):
            raise ValueError(f"unknown bridging kind {self.kind!r}")
        if self.kind == "explicit-list":
            if not self.betas:
                raise ValueError("explicit-list schedule requires betas")
            object.__setattr__(self, "adaptive", False)
        if self.betas is not None:
            b = np.asarray(self.betas, dtype=float)
            if np.any(np.diff(b) <= 0) or b[-1] != 1.0 or np.any(b <= 0):
                raise ValueError("betas must be strictly increasing in (0, 1] "
                                 "and end at 1")
        if not 0.0 < self.ess_threshold < 1.0:
            raise ValueError("ess_threshold must lie in (0, 1)")

    def bridge_logpdf(self, log_target, log_ref, beta: float):
        if self.kind == "tempered-likelihood":
            return beta * log_target
        # ratio form: (target / reference)^beta * reference
        return beta * (log_target - log_ref) + log_ref


@dataclass
class LayerRecord:
    """Per-layer build diagnostics."""

    beta: float
    ranks: list[int]
    n_evals: int
    hellinger_bridge: float
    hellinger_bridge_se: float
    hellinger_target: float
    hellinger_target_se: float
    cross_converged: bool


class DirtMap:
    """Ordered composition of SIRT layers with a shared product reference."""

    def __init__(self, variables: list[VariableSpec],
                 layers: list[SirtMap] | None = None,
                 diagnostics: list[LayerRecord] | None = None):
        self.variables = list(variables)
        self.reference = Reference(self.variables)
        self.layers = layers or []
        self.diagnostics = diagnostics or []

    @property
    def dim(self) -> int:
        return self.reference.dim

    @property
    def n_evals(self) -> int:
        return sum(rec.n_evals for rec in self.diagnostics)

    @property
    def lows(self) -> np.ndarray:
        return self.reference.lows

    @property
    def highs(self) -> np.ndarray:
        return self.reference.highs

    # -- transport --------------------------------------------------------

    def push(self, V: np.ndarray) -> TriangularPoint:
        """Composite pushforward; logdet of the full chain."""
        V = np.atleast_2d(np.asarray(V, dtype=float))
        X = V
        logdet = np.zeros(V.shape[0])
        for layer in reversed(self.layers):
            tp = layer.push_forward(X)
            X = tp.coords
            logdet += tp.logdet
        return TriangularPoint(coords=X, logdet=logdet)

    def pull(self, X: np.ndarray) -> TriangularPoint:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        V = X
        logdet = np.zeros(X.shape[0])
        for layer in self.layers:
            tp = layer.pull_back(V)
            V = tp.coords
            logdet += tp.logdet
        return TriangularPoint(coords=V, logdet=logdet)

    def pull_prefix(self, Xp: np.ndarray) -> TriangularPoint:
        Xp = np.atleast_2d(np.asarray(Xp, dtype=float))
        V = Xp
        logdet = np.zeros(Xp.shape[0])
        for layer in self.layers:
            tp = layer.pull_prefix(V)
            V = tp.coords
            logdet += tp.logdet
        return TriangularPoint(coords=V, logdet=logdet)

    def log_density(self, X: np.ndarray) -> np.ndarray:
        tp = self.pull(X)
        return tp.logdet + self.reference.logpdf(tp.coords)

    def marginal_log_density(self, Xp: np.ndarray) -> np.ndarray:
        Xp = np.atleast_2d(np.asarray(Xp, dtype=float))
        tp = self.pull_prefix(Xp)
        return tp.logdet + self.reference.logpdf_prefix(tp.coords, Xp.shape[1])

    def conditional_log_density(self, x_prefix: np.ndarray, X_tail: np.ndarray) -> np.ndarray:
        x_prefix = np.asarray(x_prefix, dtype=float).reshape(-1)
        X_tail = np.atleast_2d(np.asarray(X_tail, dtype=float))
        full = np.hstack([np.tile(x_prefix, (X_tail.shape[0], 1)), X_tail])
        log_joint = self.log_density(full)
        log_marg = self.marginal_log_density(x_prefix[None, :])
        return log_joint - log_marg[0]

    def conditional_push(self, x_prefix: np.ndarray, V_tail: np.ndarray,
                         prefix_repeat: int = 1) -> TriangularPoint:
        """Push tail reference variates given an exact leading block.

        ``x_prefix`` is one point (broadcast over the tail batch) or one
        prefix row per ``prefix_repeat`` consecutive tail rows; a partial
        tail pushes the conditional marginal over the covered
        coordinates.  The returned logdet is that of the composite
        conditional map, so the conditional log density at the output
        samples equals ``reference tail logpdf - logdet``.
        """
        x_prefix = np.asarray(x_prefix, dtype=float)
        V_tail = np.atleast_2d(np.asarray(V_tail, dtype=float))
        n = V_tail.shape[0]
        single = x_prefix.ndim == 1
        Xp = x_prefix[None, :] if single else x_prefix
        k = Xp.shape[1]
        if k + V_tail.shape[1] > self.dim:
            raise ValueError("prefix + tail exceed the map dimension")
        if single:
            prefix_repeat = n
        elif Xp.shape[0] * prefix_repeat != n:
            raise ValueError("prefix/tail batch mismatch")
        prefixes = [Xp]
        y = Xp
        for layer in self.layers:
            y = layer.pull_prefix(y).coords
            prefixes.append(y)
        tail = V_tail
        logdet = np.zeros(n)
        for idx in range(len(self.layers) - 1, -1, -1):
            tp = self.layers[idx].conditional_push(prefixes[idx], tail,
                                                   prefix_repeat=prefix_repeat)
            tail = tp.coords
            logdet += tp.logdet
        return TriangularPoint(coords=tail, logdet=logdet)

    def tail_reference(self, k: int) -> Reference:
        """Reference restricted to coordinates k..dim-1."""
        return self.reference.subset(range(k, self.dim))

    def sample(self, n: int, seed: int, *key_parts: int) -> TriangularPoint:
        """Push seeded reference draws through the composite."""
        V = self.reference.sample(n, stream(seed, 0xD1127, *key_parts))
        return self.push(V)


@dataclass
class DirtOptions:
    """Build controls shared by all layers."""

    eps_target: float = 1e-2
    tau_rel: float = 1e-8
    n_diag: int = 500
    n_pilot: int = 256
    n_ess: int = 1000
    max_layers: int = 20
    seed: int = 0


def hellinger_estimate(p_logpdf, q_logpdf, sampler_for_p, N: int,
                       seed: int = 0) -> tuple[float, float]:
    """Self-normalized Hellinger distance estimate with jackknife error.

    ``sampler_for_p`` draws N points from p; q may be unnormalized.
    """
    X = sampler_for_p(N)
    lp = np.asarray(p_logpdf(X), dtype=float)
    lq = np.asarray(q_logpdf(X), dtype=float)
    lr = lq - lp
    m = np.max(lr[np.isfinite(lr)]) if np.any(np.isfinite(lr)) else 0.0
    w = np.exp(lr - m)
    h = np.exp(0.5 * (lr - m))
    Sw, Sh = np.sum(w), np.sum(h)
    n = w.size

    def dh(sw, sh, cnt):
        bc = (sh / cnt) / np.sqrt(np.maximum(sw / cnt, 1e-300))
        return np.sqrt(np.maximum(1.0 - np.minimum(bc, 1.0), 0.0))

    value = float(dh(Sw, Sh, n))
    loo = dh(Sw - w, Sh - h, n - 1)
    se = float(np.sqrt((n - 1) / n * np.sum((loo - np.mean(loo)) ** 2)))
    return value, se


def _ess(logw: np.ndarray) -> float:
    m = np.max(logw)
    w = np.exp(logw - m)
    return float(np.sum(w) ** 2 / np.sum(w * w))


def adapt_schedule(log_target, composite: DirtMap, schedule: BridgingSchedule,
                   beta_prev: float, n: int = 1000, seed: int = 0,
                   resolution: float = 1e-3) -> float:
    """Largest next temperature keeping the importance ESS above threshold.

    Ratios compare the candidate bridging density against the current
    composite surrogate on ``n`` pushed samples; the step is located by
    bisection to the given resolution.
    """
    rng = stream(seed, 0xADA57, len(composite.layers))
    V = composite.reference.sample(n, rng)
    tp = composite.push(V)
    X = tp.coords
    log_p = composite.reference.logpdf(V) - tp.logdet
    lt = np.asarray(log_target(X), dtype=float)
    lref = composite.reference.logpdf(X)
    target_ess = schedule.ess_threshold * n

    def ess_at(beta: float) -> float:
        return _ess(schedule.bridge_logpdf(lt, lref, beta) - log_p)

    if ess_at(1.0) >= target_ess:
        return 1.0
    lo, hi = beta_prev, 1.0
    if ess_at(min(beta_prev + resolution, 1.0)) < target_ess:
        raise ScheduleError(
            f"no admissible tempering step above beta={beta_prev:.4f} "
            f"(ESS threshold {schedule.ess_threshold})")
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if ess_at(mid) >= target_ess:
            lo = mid
        else:
            hi = mid
    return lo


class _CountedTarget:
    """Wraps the target log density with an evaluation counter."""

    def __init__(self, fn):
        self.fn = fn
        self.count = 0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        self.count += X.shape[0]
        return np.asarray(self.fn(X), dtype=float).reshape(X.shape[0])


def build_dirt(log_target, schedule: BridgingSchedule,
               bases: list[Basis1D] | int,
               cross_opts: CrossOptions | None = None,
               eps_target: float = 1e-2,
               variables: list[VariableSpec] | None = None,
               options: DirtOptions | None = None) -> DirtMap:
    """Layered transport to an unnormalized log density on a box.

    Parameters
    ----------
    log_target:
        Vectorized unnormalized log density, (n, d) -> (n,), finite on
        the box interior.
    schedule:
        Bridging plan; adaptive schedules choose temperatures by ESS.
    bases:
        Per-dimension bases, or a node count (variables then required).
    cross_opts:
        Options for each layer's cross build.
    eps_target:
        Hellinger goal per layer; a layer estimated above ten times this
        aborts the build.
    variables:
        Working intervals and reference marginals; defaults to uniform
        on the bases' box.
    """
    opts = options or DirtOptions(eps_target=eps_target)
    opts.eps_target = eps_target
    if variables is None:
        if isinstance(bases, int):
            raise ValueError("variables are required when bases is a node count")
        variables = [uniform_variable(b.a, b.b) for b in bases]
    if isinstance(bases, int):
        bases = make_bases(bases, [v.lo for v in variables], [v.hi for v in variables])
    cross_opts = cross_opts or CrossOptions()

    dirt = DirtMap(variables)
    extend_dirt(dirt, log_target, schedule, bases, cross_opts, opts)
    return dirt


def extend_dirt(dirt: DirtMap, log_target, schedule: BridgingSchedule,
                bases: list[Basis1D], cross_opts: CrossOptions,
                opts: DirtOptions) -> None:
    """Append layers to an existing composite until the target is reached.

    ``log_target`` is interpreted in the pullback frame of the existing
    composite: new layers bring the composite from its current implied
    density to ``current ∘ target``-style increments (the caller provides
    the target the *new* layers must realize through the current map).
    """
    target = _CountedTarget(log_target)
    ref = dirt.reference
    d = dirt.dim
    first_new_layer = len(dirt.layers)

    if schedule.adaptive:
        betas_iter = None
        beta = 0.0
    else:
        betas_iter = iter(schedule.betas)
        beta = 0.0

    n_layer = 0
    while beta < 1.0:
        if n_layer >= opts.max_layers:
            raise LayerAccuracyError(len(dirt.layers), np.inf, 10 * opts.eps_target)
        evals_before = target.count
        if schedule.adaptive:
            beta = adapt_schedule(target, dirt, schedule, beta,
                                  n=opts.n_ess, seed=opts.seed)
        else:
            beta = float(next(betas_iter))
        logger.info("dirt layer %d: beta=%.4f", len(dirt.layers), beta)

        def pullback_bridge(V, beta=beta):
            tp = dirt.push(V)
            lt = target(tp.coords)
            lref = ref.logpdf(tp.coords)
            return schedule.bridge_logpdf(lt, lref, beta) + tp.logdet

        # pilot scan for the underflow offset and good starting pivots
        U = sobol_points(min(d, 32), opts.n_pilot, skip=1)
        if d > 32:
            U = np.hstack([U, stream(opts.seed, 0x9101, len(dirt.layers))
                           .random((opts.n_pilot, d - 32))])
        V_pilot = ref.lows + U * (ref.highs - ref.lows)
        lp_pilot = pullback_bridge(V_pilot)
        offset = float(np.max(lp_pilot))
        top = V_pilot[np.argsort(lp_pilot)[::-1][:8]]

        def sqrt_bridge(V, beta=beta, offset=offset):
            return np.exp(0.5 * (pullback_bridge(V, beta) - offset))

        layer_opts = CrossOptions(
            max_rank=cross_opts.max_rank, init_rank=cross_opts.init_rank,
            kick_rank=cross_opts.kick_rank, max_sweeps=cross_opts.max_sweeps,
            rel_tol=cross_opts.rel_tol, sample_budget=cross_opts.sample_budget,
            seed=cross_opts.seed + 101 * len(dirt.layers))
        tt = build_cross(sqrt_bridge, bases, layer_opts, init_points=top)
        layer = build_sirt(tt, tau_rel=opts.tau_rel, reference=ref)
        dirt.layers.append(layer)

        # accuracy diagnostics in the native frame, one target batch for both
        rng = stream(opts.seed, 0xD1A6, len(dirt.layers))
        Vd = ref.sample(opts.n_diag, rng)
        tp = dirt.push(Vd)
        log_p = ref.logpdf(Vd) - tp.logdet
        lt = target(tp.coords)
        lref = ref.logpdf(tp.coords)
        h_bridge, h_bridge_se = _hellinger_from_logs(
            log_p, schedule.bridge_logpdf(lt, lref, beta))
        h_target, h_target_se = _hellinger_from_logs(log_p, lt)
        dirt.diagnostics.append(LayerRecord(
            beta=beta, ranks=tt.ranks, n_evals=target.count - evals_before,
            hellinger_bridge=h_bridge, hellinger_bridge_se=h_bridge_se,
            hellinger_target=h_target, hellinger_target_se=h_target_se,
            cross_converged=tt.build.converged))
        logger.info("dirt layer %d: ranks=%s D_H(bridge)=%.3g D_H(target)=%.3g "
                    "evals=%d", len(dirt.layers) - 1, tt.ranks, h_bridge,
                    h_target, target.count - evals_before)
        if h_bridge > 10 * opts.eps_target:
            raise LayerAccuracyError(len(dirt.layers) - 1, h_bridge,
                                     10 * opts.eps_target)
        n_layer += 1

    if first_new_layer == len(dirt.layers):
        raise ScheduleError("schedule produced no layers")


def _hellinger_from_logs(log_p: np.ndarray, log_q: np.ndarray) -> tuple[float, float]:
    """Hellinger estimate from matched log density evaluations."""
    lr = log_q - log_p
    finite = np.isfinite(lr)
    m = np.max(lr[finite]) if np.any(finite) else 0.0
    w = np.where(finite, np.exp(lr - m), 0.0)
    h = np.where(finite, np.exp(0.5 * (lr - m)), 0.0)
    Sw, Sh = np.sum(w), np.sum(h)
    n = w.size

    def dh(sw, sh, cnt):
        bc = (sh / cnt) / np.sqrt(np.maximum(sw / cnt, 1e-300))
        return np.sqrt(np.maximum(1.0 - np.minimum(bc, 1.0), 0.0))

    value = float(dh(Sw, Sh, n))
    loo = dh(Sw - w, Sh - h, n - 1)
    se = float(np.sqrt((n - 1) / n * np.sum((loo - np.mean(loo)) ** 2)))
    return value, se
