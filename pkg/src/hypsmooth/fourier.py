"""Time-periodic problems in Fourier modes.

Conventions (kept identical everywhere in the package):

* modes are unnormalized, ``f_s(x) = int_0^{2 pi} f(x, t) e^{-i s t} dt``, so
  ``f(x, t) = (1 / 2 pi) sum_s f_s(x) e^{i s t}``;
* ``||f||_{W^gamma}^2 = sum_s (1 + s^2)^gamma int_0^1 |f_s(x)|^2 dx``;
* the L2 pairing is ``<f, u> = (1 / 2 pi) int_0^{2 pi} int_0^1 f . u dx dt``,
  which in modes reads ``(1 / 2 pi)^2 sum_s int_0^1 f_s . conj(u_s) dx``.

For time-independent coefficients the mode problem at frequency ``s`` is the
two-point boundary value problem ``a u' + (i s + b) u = f_s`` with the
reflection conditions of :class:`~hypsmooth.boundary.LinearReflection`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre as L
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import minimize

from .boundary import LinearReflection
from .grid import GridFunction
from .system import PERIOD, HyperbolicSystem

__all__ = [
    "PanelGrid",
    "FourierField",
    "to_modes",
    "from_modes",
    "w_norm",
    "w_tail_bound",
    "l2_pairing",
    "ExponentProfiles",
    "exponent_profiles",
    "ModeReflectionMatrix",
    "mode_reflection",
    "IsoMargins",
    "iso_margins",
    "ModeSingularError",
    "ModeSolution",
    "solve_mode_diagonal",
    "solve_mode_full",
    "mode_residual",
    "boundary_matrices",
    "fundamental_matrix",
]


# ---------------------------------------------------------------------------
# x discretization


@dataclass
class PanelGrid:
    """Composite Gauss-Legendre nodes on [0, 1], panels split at breakpoints."""

    edges: np.ndarray
    order: int

    @classmethod
    def build(cls, panels: int = 8, order: int = 8, breakpoints=()) -> "PanelGrid":
        edges = np.unique(np.concatenate([np.linspace(0.0, 1.0, panels + 1),
                                          [b for b in breakpoints if 0.0 < b < 1.0]]))
        return cls(edges, order)

    @cached_property
    def _ref(self):
        xi, w = L.leggauss(self.order)
        V = L.legvander(xi, self.order - 1)
        Vinv = np.linalg.inv(V)
        eye = np.eye(self.order)
        # integral from -1 of each Legendre polynomial, evaluated at the nodes
        integ = np.stack([L.legval(xi, L.legint(eye[p], lbnd=-1)) for p in range(self.order)], axis=1)
        deriv = np.stack([L.legval(xi, L.legder(eye[p])) for p in range(self.order)], axis=1)
        return xi, w, Vinv, integ @ Vinv, deriv @ Vinv

    @property
    def panels(self) -> int:
        return self.edges.size - 1

    @cached_property
    def nodes(self) -> np.ndarray:
        xi = self._ref[0]
        a, b = self.edges[:-1, None], self.edges[1:, None]
        return ((a + b) / 2 + (b - a) / 2 * xi).ravel()

    @cached_property
    def weights(self) -> np.ndarray:
        w = self._ref[1]
        return ((self.edges[1:, None] - self.edges[:-1, None]) / 2 * w).ravel()

    @property
    def size(self) -> int:
        return self.panels * self.order

    @cached_property
    def cumulative(self) -> np.ndarray:
        """Matrix ``C`` with ``(C f)_i = int_0^{x_i} f``."""
        q = self.order
        C = np.zeros((self.size, self.size))
        Cp = self._ref[3]
        for p in range(self.panels):
            h = self.edges[p + 1] - self.edges[p]
            rows = slice(p * q, (p + 1) * q)
            C[rows, rows] = Cp * h / 2
            C[rows, :p * q] = self.weights[:p * q]
        return C

    @cached_property
    def derivative(self) -> np.ndarray:
        q = self.order
        Dm = np.zeros((self.size, self.size))
        Dp = self._ref[4]
        for p in range(self.panels):
            h = self.edges[p + 1] - self.edges[p]
            rows = slice(p * q, (p + 1) * q)
            Dm[rows, rows] = Dp * 2 / h
        return Dm

    def integrate(self, vals) -> np.ndarray:
        return np.asarray(vals) @ self.weights

    def interpolate(self, vals, xq) -> np.ndarray:
        """Evaluate the per-panel polynomial interpolant of ``vals`` (..., N) at ``xq``."""
        vals = np.asarray(vals)
        xq = np.atleast_1d(np.asarray(xq, dtype=float))
        Vinv = self._ref[2]
        p = np.clip(np.searchsorted(self.edges, xq, side="right") - 1, 0, self.panels - 1)
        a, b = self.edges[p], self.edges[p + 1]
        xi = (2 * xq - a - b) / (b - a)
        basis = L.legvander(xi, self.order - 1)  # (M, q)
        blocks = vals.reshape(vals.shape[:-1] + (self.panels, self.order))
        coef = blocks @ Vinv.T  # (..., panels, q)
        return np.einsum("...mq,mq->...m", coef[..., p, :], basis)


# ---------------------------------------------------------------------------
# mode fields


@dataclass
class FourierField:
    """Modes ``f_s(x)`` for ``s = -S..S`` on an x-grid with quadrature weights."""

    modes: np.ndarray  # (2S+1, n, Nx) complex
    x: np.ndarray
    xweights: np.ndarray

    @property
    def s_max(self) -> int:
        return (self.modes.shape[0] - 1) // 2

    @property
    def s(self) -> np.ndarray:
        return np.arange(-self.s_max, self.s_max + 1)

    @property
    def n(self) -> int:
        return self.modes.shape[1]

    def mode(self, s: int) -> np.ndarray:
        return self.modes[s + self.s_max]

    def realness_defect(self) -> float:
        """``max |f_{-s} - conj(f_s)|``; zero for real fields."""
        return float(np.max(np.abs(self.modes[::-1] - np.conj(self.modes)), initial=0.0))

    def enforce_real(self) -> "FourierField":
        sym = 0.5 * (self.modes + np.conj(self.modes[::-1]))
        return FourierField(sym, self.x, self.xweights)

    def with_modes(self, modes) -> "FourierField":
        return FourierField(np.asarray(modes), self.x, self.xweights)


def _trapezoid_weights(x):
    w = np.zeros(x.size)
    d = np.diff(x)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def to_modes(u: GridFunction, s_max: int, xweights=None) -> FourierField:
    """Trapezoid-rule mode integrals of a periodic grid field."""
    if not u.periodic:
        raise ValueError("to_modes needs a periodic GridFunction")
    nt = u.t.size
    if s_max >= nt / 2:
        raise ValueError(f"s_max={s_max} aliases on {nt} time samples (need s_max < {nt / 2})")
    coef = np.fft.fft(u.values, axis=2) * (PERIOD / nt)  # index s mod nt
    s = np.arange(-s_max, s_max + 1)
    modes = coef[:, :, s % nt] * np.exp(-1j * s * u.t[0])
    modes = np.transpose(modes, (2, 0, 1))
    w = _trapezoid_weights(u.x) if xweights is None else np.asarray(xweights)
    return FourierField(modes, u.x.copy(), w)


def from_modes(F: FourierField, nt: int, t0: float = 0.0, interp: str = "linear") -> GridFunction:
    """Synthesize ``(1 / 2 pi) sum_s f_s e^{i s t}`` on ``nt`` equispaced times."""
    if F.s_max >= nt / 2:
        raise ValueError(f"{nt} time samples cannot carry modes up to {F.s_max}")
    t = t0 + np.arange(nt) * (PERIOD / nt)
    phase = np.exp(1j * np.outer(F.s, t))  # (2S+1, nt)
    vals = np.einsum("snx,sk->nxk", F.modes, phase) / PERIOD
    return GridFunction(F.x, t, vals.real, periodic=True, interp=interp)


def w_norm(F: FourierField, gamma: float = 0.0) -> float:
    """Truncated ``W^gamma`` norm (not squared)."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    per_mode = np.sum(np.abs(F.modes) ** 2 * F.xweights, axis=(1, 2))
    return float(np.sqrt(np.sum((1.0 + F.s.astype(float) ** 2) ** gamma * per_mode)))


def w_tail_bound(s_max: int, gamma: float, C: float, p: float) -> float:
    """Bound on the squared norm contribution of ``|s| > s_max`` for modes
    with ``||f_s||_{L2} <= C |s|^{-p}`` (needs ``p > gamma + 1/2``)."""
    if p <= gamma + 0.5:
        return float("inf")
    e = 2 * gamma - 2 * p
    # (1 + s^2)^gamma <= 2^gamma s^{2 gamma} for |s| >= 1; integral comparison
    return float(2 * 2**gamma * C**2 * s_max ** (e + 1) / (-(e + 1)))


def l2_pairing(F: FourierField, G: FourierField) -> complex:
    """``<f, g> = (1/2pi) int int f . g`` evaluated from modes."""
    total = np.sum(F.modes * np.conj(G.modes) * F.xweights)
    return complex(total / PERIOD**2)


# ---------------------------------------------------------------------------
# exponent profiles and reflection matrices


def _operator_fields(sys):
    yield from sys.a
    for row in sys.b:
        yield from row


def _require_time_independent(sys):
    if not all(c.time_independent for c in _operator_fields(sys)):
        raise ValueError("mode analysis needs time-independent coefficients")


def _coeff_nodes(sys, x):
    a = np.stack([sys.a[j](x, 0.0) for j in range(sys.n)])
    b = np.stack([np.stack([sys.b[j][k](x, 0.0) for k in range(sys.n)]) for j in range(sys.n)])
    return a, b  # (n, N), (n, n, N)


@dataclass
class ExponentProfiles:
    """``alpha_j(x) = int_0^x 1/a_j`` and ``beta_j(x) = int_0^x b_jj/a_j`` at the
    grid nodes, with their values at ``x = 1``."""

    grid: PanelGrid
    m: int
    a: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    alpha1: np.ndarray
    beta1: np.ndarray
    bdiag: np.ndarray | None = None  # b_jj at the nodes

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def at(self, x):
        return self.grid.interpolate(self.alpha, x), self.grid.interpolate(self.beta, x)


def exponent_profiles(sys: HyperbolicSystem, grid: PanelGrid | None = None, eps_a: float = 1e-10) -> ExponentProfiles:
    _require_time_independent(sys)
    grid = grid or PanelGrid.build(breakpoints=sys.breakpoints())
    x = grid.nodes
    a, b = _coeff_nodes(sys, x)
    if np.min(np.abs(a)) < eps_a:
        j, i = np.unravel_index(np.argmin(np.abs(a)), a.shape)
        raise ValueError(f"|a_{j}| falls below {eps_a} near x={x[i]:.6g}")
    # a zero between nodes shows up as a sign change
    for j in range(sys.n):
        if np.any(np.sign(a[j]) != np.sign(a[j, 0])):
            raise ValueError(f"a_{j} changes sign on [0, 1]")
    bdiag = np.stack([b[j, j] for j in range(sys.n)])
    C = grid.cumulative
    alpha = (1.0 / a) @ C.T
    beta = (bdiag / a) @ C.T
    return ExponentProfiles(grid, sys.m, a, alpha, beta, grid.integrate(1.0 / a), grid.integrate(bdiag / a), bdiag)


@dataclass
class ModeReflectionMatrix:
    s: int
    R: np.ndarray

    @property
    def det(self) -> complex:
        k = self.R.shape[0]
        return complex(np.linalg.det(np.eye(k) - self.R)) if k else 1.0 + 0j

    @property
    def margin(self) -> float:
        return abs(self.det)


def _reflection(profiles: ExponentProfiles, r0, r1, phases):
    """R with phase factors ``phases[j] = e^{i s alpha_j(1)}`` (or torus angles)."""
    m, n = profiles.m, profiles.n
    r0 = np.asarray(r0, dtype=float).reshape(m, n - m)
    r1 = np.asarray(r1, dtype=float).reshape(n - m, m)
    K = np.arange(m, n)
    Lc = np.arange(m)
    E = phases * np.exp(profiles.beta1)
    scale = E[K][:, None] / E[Lc][None, :]  # (n-m, m)
    return (scale * r1) @ r0


def mode_reflection(profiles: ExponentProfiles, r0, r1, s: int) -> ModeReflectionMatrix:
    phases = np.exp(1j * s * profiles.alpha1)
    return ModeReflectionMatrix(int(s), _reflection(profiles, r0, r1, phases))


@dataclass
class IsoMargins:
    min_margin: float
    worst_s: int
    torus_bound: float
    torus_angles: np.ndarray
    ge: float  # min |a_j|
    le: float  # sum ||b_jj|| + sum |r0| + sum |r1|
    margins: np.ndarray  # per sampled s

    @property
    def passed(self) -> bool:
        return self.torus_bound > 0 and self.ge > 0

    @property
    def joint_c(self) -> float:
        """Largest c for which all three conditions hold simultaneously."""
        return float(min(self.ge, 1.0 / self.le if self.le > 0 else np.inf, self.torus_bound))

    def to_dict(self) -> dict:
        return {"min_margin": self.min_margin, "worst_s": self.worst_s, "torus_bound": self.torus_bound,
                "ge": self.ge, "le": self.le, "joint_c": self.joint_c, "passed": self.passed}


def iso_margins(profiles: ExponentProfiles, r0, r1, s_max: int = 64, b_diag_sup: float | None = None,
                torus_grid: int = 64) -> IsoMargins:
    """Margins ``|det(I - R_s)|`` over ``|s| <= s_max`` and a lower bound over
    all phases: the entry moduli of ``R_s`` do not depend on ``s``, so
    replacing ``e^{i s alpha_j(1)}`` by free angles ``e^{i theta_j}`` and
    minimizing over the torus bounds every ``s`` from below."""
    n, m = profiles.n, profiles.m
    ss = np.arange(-s_max, s_max + 1)
    margins = np.array([mode_reflection(profiles, r0, r1, s).margin for s in ss])
    worst = int(ss[np.argmin(margins)])

    def det_at(theta):
        phases = np.exp(1j * np.concatenate([[0.0], theta]))
        R = _reflection(profiles, r0, r1, phases)
        k = R.shape[0]
        return abs(np.linalg.det(np.eye(k) - R)) if k else 1.0

    if n - m == 0 or m == 0:
        tb, best = 1.0, np.zeros(max(n - 1, 0))
    else:
        dims = n - 1
        pts = min(torus_grid, max(4, int(round(4096 ** (1.0 / dims)))))
        axes = [np.linspace(0, 2 * np.pi, pts, endpoint=False)] * dims
        mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        vals = np.array([det_at(th) for th in mesh])
        order = np.argsort(vals)[:8]
        tb, best = float(vals[order[0]]), mesh[order[0]]
        for idx in order:
            res = minimize(det_at, mesh[idx], method="Nelder-Mead",
                           options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 4000})
            if res.fun < tb:
                tb, best = float(res.fun), res.x
    ge = float(np.min(np.abs(profiles.a)))
    if b_diag_sup is None:
        if profiles.bdiag is not None:
            bd = np.abs(profiles.bdiag)
        else:
            bd = np.abs(np.gradient(profiles.beta, profiles.grid.nodes, axis=1) * profiles.a)
        b_diag_sup = float(np.sum(np.max(bd, axis=1)))
    le = b_diag_sup + float(np.sum(np.abs(r0))) + float(np.sum(np.abs(r1)))
    return IsoMargins(float(margins.min()), worst, min(tb, float(margins.min())), np.asarray(best), ge, le, margins)


# ---------------------------------------------------------------------------
# mode solvers


class ModeSingularError(np.linalg.LinAlgError):
    def __init__(self, s, margin):
        super().__init__(f"mode s={s}: I - R_s is singular (margin {margin:.3g})")
        self.s = s
        self.margin = margin


@dataclass
class ModeSolution:
    s: int
    values: np.ndarray  # (n, Nx, ...) at grid nodes
    left: np.ndarray  # u(0)
    right: np.ndarray  # u(1)
    singular: bool = False
    matching_sv: np.ndarray | None = None


def solve_mode_diagonal(profiles: ExponentProfiles, r0, r1, s: int, g, margin_tol: float = 1e-12) -> ModeSolution:
    """Solve ``a_j u_j' + (i s + b_jj) u_j = g_j`` with the reflection
    conditions by the integrating factor ``e^{i s alpha_j + beta_j}``.

    ``g`` has shape (n, Nx) or (n, Nx, K) for K right-hand sides at once.
    """
    g = np.asarray(g, dtype=complex)
    n, m = profiles.n, profiles.m
    r0 = np.asarray(r0, dtype=float).reshape(m, n - m)
    r1 = np.asarray(r1, dtype=float).reshape(n - m, m)
    refl = mode_reflection(profiles, r0, r1, s)
    if refl.margin < margin_tol:
        raise ModeSingularError(s, refl.margin)
    extra = g.shape[2:]
    E = np.exp(1j * s * profiles.alpha + profiles.beta)  # (n, Nx)
    E1 = np.exp(1j * s * profiles.alpha1 + profiles.beta1)  # (n,)
    weight = (E / profiles.a).reshape((n, -1) + (1,) * len(extra))
    h = weight * g
    C = profiles.grid.cumulative
    P = np.einsum("ik,nk...->ni...", C, h)
    P1 = np.einsum("k,nk...->n...", profiles.grid.weights, h)
    K, Lc = slice(m, n), slice(0, m)
    v0 = np.zeros((n,) + extra, dtype=complex)
    if n > m:
        rhs = E1[K].reshape((-1,) + (1,) * len(extra)) * np.einsum(
            "kl,l...->k...", r1, P1[Lc] / E1[Lc].reshape((-1,) + (1,) * len(extra))) - P1[K]
        w = np.linalg.solve(np.eye(n - m) - refl.R, rhs.reshape(n - m, -1)).reshape(rhs.shape)
        v0[K] = w
        if m:
            v0[Lc] = np.einsum("lk,k...->l...", r0, w)
    vals = (v0[:, None] + P) / E.reshape((n, -1) + (1,) * len(extra))
    right = (v0 + P1) / E1.reshape((-1,) + (1,) * len(extra))
    return ModeSolution(int(s), vals, v0, right)


def boundary_matrices(sys_or_n, m, r0, r1, adjoint: bool = False):
    """``(B0, B1)`` with the conditions written as ``B0 u(0) + B1 u(1) = 0``.

    For ``adjoint=True`` the conditions are those of the adjoint problem in
    the variable ``z = a w``."""
    n = sys_or_n.n if hasattr(sys_or_n, "n") else int(sys_or_n)
    r0 = np.asarray(r0, dtype=float).reshape(m, n - m)
    r1 = np.asarray(r1, dtype=float).reshape(n - m, m)
    B0 = np.zeros((n, n))
    B1 = np.zeros((n, n))
    if not adjoint:
        for j in range(m):
            B0[j, j] = 1.0
            B0[j, m:] = -r0[j]
        for j in range(m, n):
            B1[j, j] = 1.0
            B1[j, :m] = -r1[j - m]
    else:
        for j in range(m, n):
            B0[j, j] = 1.0
            B0[j, :m] = r0[:, j - m]
        for j in range(m):
            B1[j, j] = 1.0
            B1[j, m:] = r1[:, j]
    return B0, B1


def _generator(sys, s, adjoint=False):
    """``K(x)`` of ``y' = K(x) y`` for the primal (``u``) or adjoint (``z = a w``) mode ODE."""
    n = sys.n

    def K(x):
        a = np.array([float(sys.a[j](x, 0.0)) for j in range(n)])
        b = np.array([[float(sys.b[j][k](x, 0.0)) for k in range(n)] for j in range(n)])
        if adjoint:
            return (-1j * s * np.eye(n) + b.T) / a[None, :]
        return -(1j * s * np.eye(n) + b) / a[:, None]

    return K


def _constant(sys):
    return all(c.constant_value is not None for c in _operator_fields(sys))


def fundamental_matrix(sys: HyperbolicSystem, s: int, x, adjoint: bool = False, rtol: float = 1e-12):
    """Fundamental matrix ``Y(x)`` (``Y(0) = I``) of the mode ODE at the points
    ``x`` (sorted) and at ``x = 1``.  Matrix exponentials for constant
    coefficients, adaptive DOP853 split at breakpoints otherwise."""
    x = np.asarray(x, dtype=float)
    n = sys.n
    K = _generator(sys, s, adjoint)
    if _constant(sys):
        K0 = K(0.5)
        lam, V = np.linalg.eig(K0)
        if np.linalg.cond(V) < 1e8:
            Vinv = np.linalg.inv(V)
            Yx = np.einsum("ij,xj,jk->xik", V, np.exp(np.outer(x, lam)), Vinv)
            Y1 = V @ np.diag(np.exp(lam)) @ Vinv
        else:
            Yx = np.stack([expm(K0 * xi) for xi in x])
            Y1 = expm(K0)
        return Yx, Y1
    stops = [0.0] + [b for b in sys.breakpoints() if 0 < b < 1] + [1.0]
    Y = np.eye(n, dtype=complex)
    Yx = np.empty((x.size, n, n), dtype=complex)

    def rhs(xi, y):
        return (K(xi) @ y.reshape(n, n)).ravel()

    for lo, hi in zip(stops[:-1], stops[1:]):
        sel = (x >= lo) & (x <= hi) if hi == 1.0 else (x >= lo) & (x < hi)
        sol = solve_ivp(rhs, (lo, hi), Y.ravel(), method="DOP853", rtol=rtol, atol=rtol * 1e-2,
                        t_eval=x[sel] if sel.any() else None, max_step=1.0 / (8 + 2 * abs(s)))
        if not sol.success:
            raise RuntimeError(f"fundamental matrix integration failed: {sol.message}")
        if sel.any():
            Yx[sel] = sol.y.T.reshape(-1, n, n)
        end = solve_ivp(rhs, (lo, hi), Y.ravel(), method="DOP853", rtol=rtol, atol=rtol * 1e-2,
                        max_step=1.0 / (8 + 2 * abs(s)))
        Y = end.y[:, -1].reshape(n, n)
    return Yx, Y


def _gap_nullity(sv, gap=1e-6, confident=1e-3):
    """Nullity from singular values (descending) via the largest gap.

    Returns ``(nullity, gap_ratio, verdict)``; verdict is ``"confident"`` or
    ``"indeterminate"``."""
    sv = np.asarray(sv, dtype=float)
    if sv.size == 0 or sv[0] == 0:
        return sv.size, np.inf, "confident"
    floor = np.finfo(float).eps * sv[0]
    ratios = np.maximum(sv[1:], floor) / np.maximum(sv[:-1], floor)
    tail = max(sv[-1], floor) / sv[0]
    # treat the whole spectrum against zero as a final "gap"
    cand = np.where(ratios <= gap)[0]
    if cand.size:
        k = int(cand[-1]) + 1  # rank
        return sv.size - k, float(1.0 / ratios[cand[-1]]), "confident"
    if sv.size == 1 or ratios.size == 0:
        if tail <= gap * 1e-10:
            return 1, np.inf, "confident"
    if sv[-1] <= floor * 10:
        return 1, float(sv[0] / max(sv[-1], floor)), "confident"
    if np.all(ratios >= confident):
        return 0, float(1.0 / ratios.min()) if ratios.size else 1.0, "confident"
    return 0, float(1.0 / ratios.min()), "indeterminate"


def solve_mode_full(sys: HyperbolicSystem, bc: LinearReflection, s: int, g, grid: PanelGrid) -> ModeSolution:
    """Direct oracle for ``a u' + (i s + b) u = g`` with reflection conditions:
    fundamental matrix plus variation of constants, then the ``n x n``
    boundary matching system (least squares when it is singular)."""
    _require_time_independent(sys)
    g = np.asarray(g, dtype=complex)
    n, m = sys.n, sys.m
    x = grid.nodes
    Yx, Y1 = fundamental_matrix(sys, s, x)
    a, _ = _coeff_nodes(sys, x)
    Yinv = np.linalg.inv(Yx)  # (N, n, n)
    h = np.einsum("xij,jx->ix", Yinv, g / a)  # Y^{-1} a^{-1} g
    H = h @ grid.cumulative.T
    H1 = h @ grid.weights
    part = np.einsum("xij,jx->ix", Yx, H)
    part1 = Y1 @ H1
    B0, B1 = boundary_matrices(n, m, bc.r0, bc.r1)
    M = B0 + B1 @ Y1
    rhs = -B1 @ part1
    sv = np.linalg.svd(M, compute_uv=False)
    nullity, _, _ = _gap_nullity(sv)
    if nullity:
        c = np.linalg.lstsq(M, rhs, rcond=1e-10)[0]
    else:
        c = np.linalg.solve(M, rhs)
    vals = np.einsum("xij,j->ix", Yx, c) + part
    return ModeSolution(int(s), vals, c, Y1 @ c + part1, bool(nullity), sv)


def mode_residual(sys: HyperbolicSystem, bc: LinearReflection, grid: PanelGrid, sol: ModeSolution, g) -> tuple[float, float]:
    """``(ode, bc)`` sup-norm residuals of a mode solution on the grid."""
    a, b = _coeff_nodes(sys, grid.nodes)
    u = sol.values
    du = u @ grid.derivative.T
    ode = a * du + 1j * sol.s * u + np.einsum("jkx,kx->jx", b, u) - np.asarray(g)
    B0, B1 = boundary_matrices(sys.n, sys.m, bc.r0, bc.r1)
    bres = B0 @ sol.left + B1 @ sol.right
    return float(np.max(np.abs(ode))), float(np.max(np.abs(bres), initial=0.0))
