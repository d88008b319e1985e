"""Fixed-point solvers for the characteristic integral system

    u = B S u + D u + F f

on a half strip (marching in causal time slabs) and on the time-periodic
strip (iteration of the full-period map), plus the contraction check for
dissipative boundary laws and a dedicated renewal solver for the
population model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .boundary import DissipativeNonlinear, PopulationModel, jacobian
from .characteristics import exit_points
from .grid import GridFunction
from .operators import BoundaryTrace, OperatorContext, OperatorField, eval_B, eval_D, eval_D2, eval_DB, eval_F
from .system import PERIOD, FullStrip, HyperbolicSystem

__all__ = [
    "SolveConfig",
    "SolverError",
    "SlabRecord",
    "Problem",
    "SolutionBundle",
    "solve_ibvp",
    "solve_periodic_strip",
    "resolve",
    "rep_residual",
    "io_residual",
    "ContractionReport",
    "contraction_check",
    "RenewalTrace",
    "renewal_boundary",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Fixed-point iteration failed; carries the slab index and last ratio."""

    def __init__(self, message, slab=None, ratio=None, log=None):
        super().__init__(message)
        self.slab = slab
        self.ratio = ratio
        self.log = log or []


@dataclass(frozen=True)
class SolveConfig:
    nx: int = 101
    nt: int = 101
    tol: float = 1e-10
    max_iter: int = 200
    relax: float = 1.0
    slab_width: float | None = None  # default: 0.9 x minimal transit time
    interp: str = "linear"
    panels: int = 8
    gauss: int = 4
    substeps: int = 2
    polish: bool = True
    verify: bool = True

    def __post_init__(self):
        if self.nx < 2 or self.nt < 2:
            raise ValueError("need at least 2 grid points per axis")
        if not 0.0 < self.relax <= 1.0:
            raise ValueError("relaxation weight must lie in (0, 1]")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter >= 1")

    def context(self, sys: HyperbolicSystem) -> OperatorContext:
        return OperatorContext(sys, 0, self.panels, self.gauss, self.substeps)


@dataclass
class SlabRecord:
    index: int
    t_start: float
    t_end: float
    iterations: int
    ratios: list[float]
    relax: float
    all_lateral: bool

    def to_dict(self) -> dict:
        return {"index": self.index, "t_start": self.t_start, "t_end": self.t_end,
                "iterations": self.iterations, "ratios": self.ratios, "relax": self.relax,
                "all_lateral": self.all_lateral}


def _as_phi(phi, n):
    if phi is None:
        return None
    if callable(phi):
        return phi
    if len(phi) != n:
        raise ValueError(f"initial data needs {n} components")
    comps = [p if callable(p) else (lambda x, v=float(p): np.full(np.shape(x), v)) for p in phi]
    return lambda j, x: np.asarray(comps[j](np.asarray(x, dtype=float)), dtype=float)


@dataclass
class Problem:
    sys: HyperbolicSystem
    bc: object
    phi: Callable | None = None
    t_end: float | None = None

    @property
    def periodic(self) -> bool:
        return self.sys.domain.periodic


@dataclass
class SolutionBundle:
    u: GridFunction
    residual: float
    iterations: int
    slabs: list[SlabRecord]
    problem: Problem
    config: SolveConfig
    verification_residual: float | None = None
    independence_slab: int | None = None
    spectral_radius: float | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.residual <= self.config.tol

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "verification_residual": self.verification_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "independence_slab": self.independence_slab,
            "spectral_radius": self.spectral_radius,
            "grid": {"nx": int(self.u.x.size), "nt": int(self.u.t.size),
                     "t0": float(self.u.t[0]), "t1": float(self.u.t[-1])},
            "slabs": [s.to_dict() for s in self.slabs],
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------------------


def _min_transit(sys: HyperbolicSystem, window) -> float:
    # time to cross [0, 1] is at least 1 / max|a|
    return 1.0 / sys.max_speed(window)


def _rep_map(ctx, bc, phi, field_, X, T, Ff, cached=True):
    bv = BoundaryTrace(ctx.sys, bc, phi, field_)
    out = eval_B(ctx, bv, X, T, cached=cached)
    if ctx.sys.has_coupling():
        out = out + eval_D(ctx, field_, X, T, cached=cached)
    return out + Ff


def rep_residual(bundle: SolutionBundle, x=None, t=None) -> float:
    """Sup-norm defect ``|u - (BSu + Du + Ff)|`` at the given points
    (defaults to the midpoints of the solution grid)."""
    u = bundle.u
    x = 0.5 * (u.x[1:] + u.x[:-1]) if x is None else np.asarray(x, float)
    t = 0.5 * (u.t[1:] + u.t[:-1]) if t is None else np.asarray(t, float)
    X, T = np.meshgrid(x, t, indexing="ij")
    ctx = bundle.config.context(bundle.problem.sys)
    Ff = eval_F(ctx, X, T, cached=False)
    mapped = _rep_map(ctx, bundle.problem.bc, bundle.problem.phi, u, X, T, Ff, cached=False)
    vals = np.stack([u(k, X, T) for k in range(u.n)])
    return float(np.max(np.abs(vals - mapped)))


def io_residual(bundle: SolutionBundle, x=None, t=None) -> float:
    """Sup-norm defect of the second-order identity
    ``u = BSu + (DBS + D^2) u + (I + D) Ff`` (defaults to midpoints)."""
    u = bundle.u
    x = 0.5 * (u.x[1:] + u.x[:-1]) if x is None else np.asarray(x, float)
    t = 0.5 * (u.t[1:] + u.t[:-1]) if t is None else np.asarray(t, float)
    X, T = np.meshgrid(x, t, indexing="ij")
    ctx = bundle.config.context(bundle.problem.sys)
    bv = BoundaryTrace(ctx.sys, bundle.problem.bc, bundle.problem.phi, u)
    Ff = eval_F(ctx, X, T, cached=False)
    out = eval_B(ctx, bv, X, T, cached=False) + Ff
    if ctx.sys.has_coupling():
        out = out + eval_DB(ctx, bv, X, T) + eval_D2(ctx, u, X, T)
        if not all(c.is_zero for c in ctx.sys.f):
            out = out + eval_D(ctx, OperatorField(ctx, "F", None), X, T, cached=False)
    vals = np.stack([u(k, X, T) for k in range(u.n)])
    return float(np.max(np.abs(vals - out)))


def _slabs(t, width):
    """Partition indices 0..Nt-1 into consecutive slabs of duration <= width."""
    out = []
    start = 0
    t_known = t[0]
    while start < t.size:
        end = start
        while end + 1 < t.size and t[end + 1] - t_known <= width * (1 + 1e-12):
            end += 1
        if start == 0 and end == 0:
            end = 1
        out.append((start, end))
        t_known = t[end]
        start = end + 1
    return out


def _iterate(update, V0, tol, max_iter, relax, label):
    """Relaxed Picard iteration with automatic halving of the relaxation on
    divergence.  ``update(V)`` returns the mapped values."""
    last_ratio = None
    for attempt in range(3):
        V = V0.copy()
        deltas = []
        ratios = []
        diverged = False
        for it in range(1, max_iter + 1):
            new = update(V)
            delta = float(np.max(np.abs(new - V))) if new.size else 0.0
            V = relax * new + (1 - relax) * V
            if deltas and deltas[-1] > 0:
                ratios.append(delta / deltas[-1])
            deltas.append(delta)
            if not np.isfinite(delta) or (len(deltas) > 1 and delta > 1e6 * max(deltas[0], tol)):
                diverged = True
                break
            if delta <= tol:
                return V, it, ratios, relax
            if len(ratios) >= 6 and all(r >= 1.0 for r in ratios[-4:]):
                diverged = True
                break
        last_ratio = ratios[-1] if ratios else None
        if not diverged:
            raise SolverError(f"{label}: no convergence in {max_iter} iterations "
                              f"(last change {deltas[-1]:.3g}, ratio {last_ratio})", ratio=last_ratio)
        log.info("%s: divergence detected, halving relaxation %.3g", label, relax)
        relax /= 2
    raise SolverError(f"{label}: iteration diverges (last ratio {last_ratio})", ratio=last_ratio)


def solve_ibvp(sys: HyperbolicSystem, bc, phi, t_end: float, cfg: SolveConfig = SolveConfig(),
               initial: GridFunction | None = None) -> SolutionBundle:
    """Initial-boundary problem on the half strip ``t >= T`` up to ``t_end``.

    ``phi`` is the initial data: a sequence of n functions of x (or numbers),
    or a callable ``phi(j, x)``.  ``initial`` optionally warm-starts every slab.
    """
    if not sys.domain.has_initial_line:
        raise ValueError("solve_ibvp needs a HalfStrip domain; use solve_periodic_strip for periodic problems")
    if hasattr(bc, "validate"):
        bc.validate(sys)
    phi = _as_phi(phi, sys.n)
    T0 = sys.domain.T
    if t_end <= T0:
        raise ValueError("t_end must exceed the initial time")
    x = np.linspace(0.0, 1.0, cfg.nx)
    t = np.linspace(T0, t_end, cfg.nt)
    width = cfg.slab_width or 0.9 * _min_transit(sys, (T0, t_end))
    problem = Problem(sys, bc, phi, t_end)
    warn = []
    if isinstance(bc, DissipativeNonlinear):
        box = 1.0 + max(float(np.max(np.abs(phi(j, x)))) for j in range(sys.n))
        rep = contraction_check(sys, bc, 0, [(-box, box)] * sys.n)
        if not rep.passed:
            warn.append(f"contraction check fails (min margin {rep.min_margin:.3g})")

    ctx = cfg.context(sys)
    V = np.zeros((sys.n, cfg.nx, cfg.nt))
    records = []
    total = 0
    independence = None
    for s_idx, (ks, ke) in enumerate(_slabs(t, width)):
        cols = slice(ks, ke + 1)
        X, Tm = np.meshgrid(x, t[cols], indexing="ij")
        Ff = eval_F(ctx, X, Tm)
        all_lateral = not any(ctx.paths(j, X, Tm).exit.initial.any() for j in range(sys.n))
        if all_lateral and independence is None:
            independence = s_idx

        def field_with(vals):
            W = V[:, :, :ke + 1].copy()
            W[:, :, cols] = vals
            return GridFunction(x, t[:ke + 1], W, interp=cfg.interp)

        if initial is not None:
            guess = np.stack([initial(k, X, Tm) for k in range(sys.n)])
        else:
            prev = V[:, :, ks - 1:ks] if ks > 0 else np.stack([phi(j, x) for j in range(sys.n)])[:, :, None]
            guess = np.broadcast_to(prev, X.shape[:0] + (sys.n,) + X.shape).copy()
            bv = BoundaryTrace(sys, bc, phi, field_with(guess))
            guess = eval_B(ctx, bv, X, Tm)

        def update(vals):
            return _rep_map(ctx, bc, phi, field_with(vals), X, Tm, Ff)

        try:
            vals, its, ratios, relax = _iterate(update, guess, cfg.tol, cfg.max_iter, cfg.relax, f"slab {s_idx}")
        except SolverError as exc:
            exc.slab = s_idx
            exc.log = records
            raise
        V[:, :, cols] = vals
        total += its
        records.append(SlabRecord(s_idx, float(t[ks]), float(t[ke]), its, ratios, relax, all_lateral))
        ctx.cache.clear()

    u = GridFunction(x, t, V, interp=cfg.interp)
    bundle = SolutionBundle(u, np.inf, total, records, problem, cfg, independence_slab=independence, warnings=warn)
    _finish(bundle, ctx)
    return bundle


def _node_defect(bundle, ctx):
    u = bundle.u
    X, T = np.meshgrid(u.x, u.t, indexing="ij")
    Ff = eval_F(ctx, X, T, cached=False)
    mapped = _rep_map(ctx, bundle.problem.bc, bundle.problem.phi, u, X, T, Ff, cached=False)
    return mapped, Ff


def _finish(bundle, ctx):
    """Global node defect, optional polishing sweeps, verification residual."""
    cfg = bundle.config
    u = bundle.u
    mapped, Ff = _node_defect(bundle, ctx)
    defect = float(np.max(np.abs(mapped - u.values)))
    sweeps = 0
    while cfg.polish and defect > cfg.tol and sweeps < cfg.max_iter:
        u = u.with_values(mapped)
        bundle.u = u
        X, T = np.meshgrid(u.x, u.t, indexing="ij")
        mapped = _rep_map(ctx, bundle.problem.bc, bundle.problem.phi, u, X, T, Ff, cached=False)
        new_defect = float(np.max(np.abs(mapped - u.values)))
        sweeps += 1
        if new_defect >= defect:
            defect = new_defect
            break
        defect = new_defect
    bundle.iterations += sweeps
    bundle.residual = defect
    if cfg.verify:
        bundle.verification_residual = rep_residual(bundle)


def solve_periodic_strip(sys: HyperbolicSystem, bc, cfg: SolveConfig = SolveConfig(),
                         initial: GridFunction | None = None, seed: int | None = None) -> SolutionBundle:
    """Time-periodic solution on the strip via iteration of the full-period
    map on a wrap-around grid ``t_k = 2 pi k / nt``."""
    if not sys.domain.periodic:
        raise ValueError("solve_periodic_strip needs a PeriodicStrip domain")
    if hasattr(bc, "validate"):
        bc.validate(sys)
    x, t = GridFunction.periodic_grid(cfg.nx, cfg.nt)
    X, T = np.meshgrid(x, t, indexing="ij")
    ctx = cfg.context(sys)
    Ff = eval_F(ctx, X, T)
    if initial is not None:
        V0 = np.stack([initial(k, X, T) for k in range(sys.n)])
    elif seed is not None:
        V0 = np.random.default_rng(seed).standard_normal((sys.n,) + X.shape)
    else:
        V0 = np.zeros((sys.n,) + X.shape)
    problem = Problem(sys, bc)

    def update(vals):
        return _rep_map(ctx, bc, None, GridFunction(x, t, vals, True, cfg.interp), X, T, Ff)

    history = []

    def tracked(vals):
        new = update(vals)
        history.append(float(np.max(np.abs(new - vals))))
        return new

    try:
        V, its, ratios, relax = _iterate(tracked, V0, cfg.tol, cfg.max_iter, cfg.relax, "periodic map")
    except SolverError as exc:
        exc.ratio = _spectral_radius(history)
        exc.args = (f"{exc.args[0]}; spectral radius estimate {exc.ratio:.4g}",)
        raise
    u = GridFunction(x, t, V, True, cfg.interp)
    rec = SlabRecord(0, 0.0, PERIOD, its, ratios, relax, True)
    bundle = SolutionBundle(u, np.inf, its, [rec], problem, cfg, independence_slab=0,
                            spectral_radius=_spectral_radius(history))
    _finish(bundle, ctx)
    return bundle


def _spectral_radius(history, tail=5):
    h = [d for d in history if d > 0 and np.isfinite(d)]
    if len(h) < 2:
        return 0.0
    k = min(tail, len(h) - 1)
    return float((h[-1] / h[-1 - k]) ** (1.0 / k))


def resolve(bundle: SolutionBundle, nx: int, nt: int, **overrides) -> SolutionBundle:
    """Re-solve the bundle's problem at another resolution."""
    cfg = replace(bundle.config, nx=nx, nt=nt, **overrides)
    p = bundle.problem
    if p.periodic:
        return solve_periodic_strip(p.sys, p.bc, cfg)
    return solve_ibvp(p.sys, p.bc, p.phi, p.t_end, cfg)


# ---------------------------------------------------------------------------
# contraction condition for dissipative laws


@dataclass
class ContractionReport:
    margins: np.ndarray  # (n, r+1)
    weights: np.ndarray  # (n, r+1): sup of exp int_x^{x_j}(b_jj/a_j - l a_t/a_j^2)
    row_sums: np.ndarray  # (n,): sup over the box of the Jacobian-derived sum
    reading: str

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins))

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margins > 0))

    def to_dict(self) -> dict:
        return {"margins": self.margins.tolist(), "weights": self.weights.tolist(),
                "row_sums": self.row_sums.tolist(), "reading": self.reading,
                "min_margin": self.min_margin, "passed": self.passed}


def _box_samples(z_box, samples, max_points=4096, seed=0):
    axes = [np.linspace(lo, hi, samples) for lo, hi in z_box]
    if samples ** len(axes) <= max_points:
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids])
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in z_box])[:, None]
    hi = np.array([b[1] for b in z_box])[:, None]
    return lo + (hi - lo) * rng.random((len(z_box), max_points))


def contraction_check(sys: HyperbolicSystem, bc: DissipativeNonlinear, r: int = 0, z_box=None,
                      grid=(33, 33), window=None, z_samples: int = 9,
                      reading: str = "jacobian") -> ContractionReport:
    """Margins ``1 - sup exp{int_x^{x_j}(b_jj/a_j - l d_t a_j/a_j^2)} * S_j`` for
    ``l = 0..r``.

    ``reading="jacobian"``: ``S_j = sum_k |d h_j / d z_k|``.
    ``reading="hessian"``: ``S_j = sum_k sum_i |d^2 h_j / d z_k d z_i|``.
    """
    n = sys.n
    if z_box is None:
        z_box = [(-1.0, 1.0)] * n
    if len(z_box) != n:
        raise ValueError("z_box needs one interval per component")
    lateral = sys.with_domain(FullStrip()) if sys.domain.has_initial_line else sys
    if window is None:
        window = (0.0, PERIOD) if sys.domain.periodic else sys.domain.default_window()
    xs = np.linspace(0.0, 1.0, grid[0])
    ts = np.linspace(window[0], window[1], grid[1])
    X, T = np.meshgrid(xs, ts, indexing="ij")
    weights = np.empty((n, r + 1))
    for j in range(n):
        ex = exit_points(lateral, j, X.ravel(), T.ravel())
        for l in range(r + 1):
            weights[j, l] = float(np.max(ex.weight(l)))
    Z = _box_samples(z_box, z_samples)
    if reading == "jacobian":
        J = jacobian(bc.h, Z)
        row = np.max(np.sum(np.abs(J), axis=1), axis=1)
    elif reading == "hessian":
        step = 1e-4
        acc = np.zeros((n, Z.shape[1]))
        for k in range(n):
            e = np.zeros_like(Z)
            e[k] = step
            Hk = (jacobian(bc.h, Z + e) - jacobian(bc.h, Z - e)) / (2 * step)  # d_k of J[j, i]
            acc += np.sum(np.abs(Hk), axis=1)
        row = np.max(acc, axis=1)
    else:
        raise ValueError(f"unknown reading {reading!r}")
    margins = 1.0 - weights * row[:, None]
    return ContractionReport(margins, weights, row, reading)


# ---------------------------------------------------------------------------
# renewal equation for the population model


@dataclass
class RenewalTrace:
    t: np.ndarray
    u0: np.ndarray

    def __call__(self, tau):
        return np.interp(tau, self.t, self.u0)


def renewal_boundary(pop: PopulationModel, phi, t_end: float, nx: int = 201, T0: float = 0.0,
                     tol: float = 1e-14) -> RenewalTrace:
    """March the birth trace ``u0(t) = u(0, t)`` of the population model.

    Uses the trapezoid rule on the uniform age grid with time step equal to
    the age step, so ``u(x_i, t_k) = e^{-mu x_i} u0(t_{k-i})`` for ``i < k``
    and ``e^{-mu (t_k - T0)} phi(x_i - (t_k - T0))`` otherwise.
    """
    if callable(phi):
        phi_x = phi
    else:
        phi_x = phi[0]
    hx = 1.0 / (nx - 1)
    steps = (t_end - T0) / hx
    nt = int(round(steps)) + 1
    if abs(steps - (nt - 1)) > 1e-9 * max(1.0, steps):
        raise ValueError("t_end - T0 must be a multiple of the age step")
    x = np.linspace(0.0, 1.0, nx)
    t = T0 + hx * np.arange(nt)
    w = np.full(nx, hx)
    w[0] = w[-1] = hx / 2
    w = w * pop.gamma(x)
    decay = np.exp(-pop.mu * x)
    u0 = np.empty(nt)
    u0[0] = float(np.asarray(phi_x(np.array([0.0])))[0])
    for k in range(1, nt):
        i = np.arange(nx)
        vals = np.empty(nx)
        hist = (i > 0) & (i < k)
        vals[hist] = decay[hist] * u0[k - i[hist]]
        init = i >= k
        age = t[k] - T0
        vals[init] = np.exp(-pop.mu * age) * phi_x(np.clip(x[init] - age, 0.0, 1.0))
        known = float(np.sum(w[1:] * vals[1:]))
        guess = u0[k - 1]
        for _ in range(200):
            nxt = float(pop.h(w[0] * guess + known))
            if abs(nxt - guess) <= tol * (1 + abs(nxt)):
                guess = nxt
                break
            guess = nxt
        u0[k] = guess
    return RenewalTrace(t, u0)
