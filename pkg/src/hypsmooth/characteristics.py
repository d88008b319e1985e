"""Characteristic curves, exit points and exponential weights.

The j-th characteristic through ``(x, t)`` is ``xi -> omega_j(xi; x, t)`` with
``d omega / d xi = 1 / a_j(xi, omega)`` and ``omega_j(x; x, t) = t``.  Along it

    c_j^(l)(xi, x, t) = exp int_x^xi (b_jj / a_j - l * d_t a_j / a_j**2) d eta,
    d_j^(l) = c_j^(l) / a_j(xi, omega_j(xi; x, t)).

Two routes are provided.  Scalar queries (:func:`trace`, :func:`exit_point`,
:func:`weight`, :func:`omega_derivatives`) use adaptive Dormand-Prince steps.
Batches of anchors (:func:`exit_points`, :func:`build_paths`) use a fixed
node-to-node RK4 march vectorized over anchors, which is what the integral
operators consume.
"""

from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .system import HyperbolicSystem

__all__ = [
    "CharacteristicError",
    "CharacteristicPath",
    "ExitPoint",
    "ExitBatch",
    "PathBundle",
    "PathCache",
    "trace",
    "exit_point",
    "weight",
    "omega_derivatives",
    "march",
    "exit_points",
    "build_paths",
]

DEFAULT_TOL = 1e-10
TIE_EPS = 1e-12


class CharacteristicError(RuntimeError):
    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


def _lateral_boundary(sys: HyperbolicSystem, j: int) -> float:
    return 0.0 if j < sys.m else 1.0


# ---------------------------------------------------------------------------
# scalar adaptive route


def _ivp_rhs(sys, j):
    a, bjj = sys.a[j], sys.b[j][j]

    def rhs(xi, y):
        av = float(a(xi, y[0]))
        return [1.0 / av, float(bjj(xi, y[0])) / av, float(a.dt(xi, y[0])) / av**2]

    return rhs


def _integrate(sys, j, x, t, xi_end, tol, max_step=np.inf, events=None):
    """Adaptive integration of (omega, int b/a, int a_t/a^2) from x to xi_end,
    restarted at coefficient breakpoints."""
    rhs = _ivp_rhs(sys, j)
    bps = [b for b in sys.breakpoints(j) if min(x, xi_end) < b < max(x, xi_end)]
    stops = sorted(bps, reverse=bool(xi_end < x)) + [xi_end]
    y = np.array([t, 0.0, 0.0])
    xi = x
    xs, ys = [xi], [y.copy()]
    hit = None
    for stop in stops:
        if stop == xi:
            continue
        # evaluate coefficients strictly inside the segment so that jumps at
        # its ends are seen from the correct side
        lo, hi = sorted((xi, stop))
        lo_in, hi_in = np.nextafter(lo, hi), np.nextafter(hi, lo)

        def seg_rhs(s, y, lo_in=lo_in, hi_in=hi_in):
            return rhs(min(max(s, lo_in), hi_in), y)

        sol = solve_ivp(seg_rhs, (xi, stop), y, method="RK45", rtol=tol, atol=tol * 1e-2,
                        max_step=max_step, events=events, dense_output=False)
        if sol.status == -1:
            raise CharacteristicError(f"characteristic {j} integration failed near xi={sol.t[-1]:.6g}: "
                                      f"{sol.message}", (float(sol.t[-1]), float(sol.y[0, -1])))
        xs.extend(sol.t[1:])
        ys.extend(sol.y[:, 1:].T)
        if sol.status == 1:
            hit = (float(sol.t_events[0][0]), sol.y_events[0][0])
            xs.append(hit[0])
            ys.append(np.asarray(hit[1]))
            break
        xi, y = stop, sol.y[:, -1]
    return np.asarray(xs), np.asarray(ys), hit


@dataclass
class CharacteristicPath:
    j: int
    anchor: tuple[float, float]
    xi: np.ndarray
    omega: np.ndarray
    slope: np.ndarray
    tolerance: float
    clipped: bool = False

    def __call__(self, xi):
        spline = CubicHermiteSpline(self.xi, self.omega, self.slope)
        return spline(xi)


def trace(sys: HyperbolicSystem, j: int, x: float, t: float, xi_range=(0.0, 1.0),
          tol: float = DEFAULT_TOL, max_step: float = 1 / 64) -> CharacteristicPath:
    """Trace the j-th characteristic through ``(x, t)`` over ``xi_range``.

    On a half strip the path is clipped where it crosses the initial line and
    ``clipped`` is set.
    """
    lo, hi = xi_range
    if not (0.0 <= lo <= x <= hi <= 1.0):
        raise ValueError(f"xi_range {xi_range} must lie in [0, 1] and contain x={x}")
    events = None
    if sys.domain.has_initial_line:
        def leave(xi, y):
            return y[0] - sys.domain.T
        leave.terminal = True
        leave.direction = -1
        events = leave
    pieces = []
    clipped = False
    for end in (lo, hi):
        if end == x:
            continue
        xs, ys, hit = _integrate(sys, j, x, t, end, tol, max_step, events)
        clipped |= hit is not None and hit[0] != end
        pieces.append((xs, ys[:, 0]))
    xi_all = np.concatenate([p[0] for p in pieces] + [np.array([x])])
    om_all = np.concatenate([p[1] for p in pieces] + [np.array([t])])
    order = np.argsort(xi_all)
    xi_all, om_all = xi_all[order], om_all[order]
    keep = np.concatenate([[True], np.diff(xi_all) > 1e-13])
    xi_all, om_all = xi_all[keep], om_all[keep]
    slope = 1.0 / sys.a[j](xi_all, om_all)
    return CharacteristicPath(j, (x, t), xi_all, om_all, slope, tol, clipped)


@dataclass(frozen=True)
class ExitPoint:
    x: float
    tau: float
    kind: str  # "lateral" | "initial"


def exit_point(sys: HyperbolicSystem, j: int, x: float, t: float, tol: float = DEFAULT_TOL) -> ExitPoint:
    """Boundary point of the j-th characteristic through ``(x, t)`` with the
    smaller ordinate."""
    xb = _lateral_boundary(sys, j)
    _, ys, _ = _integrate(sys, j, x, t, xb, tol)
    tau_lat = float(ys[-1, 0])
    T = sys.domain.T
    if not sys.domain.has_initial_line or tau_lat > T + TIE_EPS * (1 + abs(T)):
        return ExitPoint(xb, tau_lat, "lateral")
    if t <= T:
        return ExitPoint(x, T, "initial")
    if tau_lat >= T - TIE_EPS * (1 + abs(T)):
        return ExitPoint(xb, T, "initial")  # the corner

    def gap(xi):
        _, y, _ = _integrate(sys, j, x, t, xi, tol)
        return y[-1, 0] - T

    root = brentq(gap, min(x, xb), max(x, xb), xtol=tol, rtol=4 * np.finfo(float).eps)
    return ExitPoint(float(root), T, "initial")


def weight(sys: HyperbolicSystem, j: int, l: int, xi: float, x: float, t: float,
           tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """``(c_j^(l), d_j^(l))`` at ``xi`` for the characteristic through ``(x, t)``."""
    if xi == x:
        return 1.0, 1.0 / float(sys.a[j](x, t))
    xs, ys, _ = _integrate(sys, j, x, t, xi, tol * 1e-2)
    om, ib, ia = ys[-1]
    c = float(np.exp(ib - l * ia))
    return c, c / float(sys.a[j](xi, om))


def omega_derivatives(sys: HyperbolicSystem, j: int, xi: float, x: float, t: float,
                      tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """``(d_x omega_j, d_t omega_j)`` at ``xi`` via the exponential formulas:
    ``d_t omega = exp int_xi^x (a_t / a^2)`` and ``d_x omega = -d_t omega / a_j(x, t)``."""
    if xi == x:
        dt = 1.0
    else:
        _, ys, _ = _integrate(sys, j, x, t, xi, tol * 1e-2)
        dt = float(np.exp(-ys[-1, 2]))
    return -dt / float(sys.a[j](x, t)), dt


# ---------------------------------------------------------------------------
# vectorized route


def _rhs_batch(sys, j):
    a, bjj = sys.a[j], sys.b[j][j]
    b_zero = bjj.is_zero
    a_ti = a.time_independent

    def rhs(xi, om):
        av = a(xi, om)
        inv = 1.0 / av
        gb = 0.0 if b_zero else bjj(xi, om) * inv
        ga = 0.0 if a_ti else a.dt(xi, om) * inv * inv
        return inv, gb, ga

    return rhs


def march(sys: HyperbolicSystem, j: int, x, t, nodes, substeps: int = 2):
    """Fixed-step RK4 along characteristics of component ``j``.

    ``x``, ``t`` have shape (A,); ``nodes`` has shape (A, K) and lists abscissae
    ordered away from each anchor.  Returns ``(omega, ib, ia)`` at the nodes,
    where ``ib = int_x^xi b_jj/a`` and ``ia = int_x^xi a_t/a^2``.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    a, bjj = sys.a[j], sys.b[j][j]
    ac, bc = a.constant_value, bjj.constant_value
    if ac is not None and bc is not None:
        dxi = nodes - x[:, None]
        om = t[:, None] + dxi / ac
        return om, dxi * (bc / ac), np.zeros_like(dxi)

    rhs = _rhs_batch(sys, j)
    A, K = nodes.shape
    om_out = np.empty((A, K))
    ib_out = np.empty((A, K))
    ia_out = np.empty((A, K))
    xi, om = x.copy(), t.copy()
    ib = np.zeros(A)
    ia = np.zeros(A)
    # panel edges sit on breakpoints; keep end stages on the panel's own side
    eps = 1e-13 if sys.breakpoints(j) else 0.0
    for k in range(K):
        target = nodes[:, k]
        h = (target - xi) / substeps
        for _ in range(substeps):
            k1 = rhs(xi + eps * h, om)
            k2 = rhs(xi + h / 2, om + h / 2 * k1[0])
            k3 = rhs(xi + h / 2, om + h / 2 * k2[0])
            k4 = rhs(xi + (1 - eps) * h, om + h * k3[0])
            om = om + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            ib = ib + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            ia = ia + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
            xi = xi + h
        xi = target.copy()
        om_out[:, k], ib_out[:, k], ia_out[:, k] = om, ib, ia
    return om_out, ib_out, ia_out


def _edges(x, xe, panels, breakpoints):
    """Panel edges from x towards xe, split at breakpoints; shape (A, P+nb+1)."""
    s = np.linspace(0.0, 1.0, panels + 1)
    base = x[:, None] + (xe - x)[:, None] * s[None, :]
    if breakpoints:
        lo = np.minimum(x, xe)[:, None]
        hi = np.maximum(x, xe)[:, None]
        bp = np.asarray(breakpoints)[None, :]
        inside = (bp > lo) & (bp < hi)
        extra = np.where(inside, bp, x[:, None])
        base = np.concatenate([base, extra], axis=1)
        key = (base - x[:, None]) * np.where(xe >= x, 1.0, -1.0)[:, None]
        base = np.take_along_axis(base, np.argsort(key, axis=1, kind="stable"), axis=1)
    return base


@dataclass
class ExitBatch:
    x: np.ndarray
    tau: np.ndarray
    initial: np.ndarray
    ib: np.ndarray
    ia: np.ndarray

    def weight(self, l: int = 0) -> np.ndarray:
        return np.exp(self.ib - l * self.ia)


def exit_points(sys: HyperbolicSystem, j: int, x, t, panels: int = 16, substeps: int = 4) -> ExitBatch:
    """Vectorized exit points, with the exit weights' log-integrands."""
    x = np.asarray(x, dtype=float).ravel()
    t = np.asarray(t, dtype=float).ravel()
    xb = np.full_like(x, _lateral_boundary(sys, j))
    nodes = _edges(x, xb, panels, sys.breakpoints(j))[:, 1:]
    om, ib, ia = march(sys, j, x, t, nodes, substeps)
    tau = om[:, -1].copy()
    xe = xb.copy()
    ibe, iae = ib[:, -1].copy(), ia[:, -1].copy()
    initial = np.zeros(x.shape, dtype=bool)
    if sys.domain.has_initial_line:
        T = sys.domain.T
        initial = ~(tau > T + TIE_EPS * (1 + abs(T)))
        if initial.any():
            xi0 = _initial_crossing(sys, j, x[initial], t[initial], T, panels * substeps)
            xe[initial] = xi0
            tau[initial] = T
            nodes_i = _edges(x[initial], xi0, panels, sys.breakpoints(j))[:, 1:]
            _, ib_i, ia_i = march(sys, j, x[initial], t[initial], nodes_i, substeps)
            ibe[initial], iae[initial] = ib_i[:, -1], ia_i[:, -1]
    return ExitBatch(xe, tau, initial, ibe, iae)


def _initial_crossing(sys, j, x, t, T, steps):
    """Abscissa where the characteristic meets the line tau = T, integrating
    d xi / d tau = a_j(xi, tau) backwards from tau = t."""
    a = sys.a[j]
    if a.constant_value is not None:
        return np.clip(x + a.constant_value * (T - t), 0.0, 1.0)
    xi = x.copy()
    tau = t.copy()
    h = (T - t) / steps
    for _ in range(steps):
        k1 = a(xi, tau)
        k2 = a(np.clip(xi + h / 2 * k1, 0, 1), tau + h / 2)
        k3 = a(np.clip(xi + h / 2 * k2, 0, 1), tau + h / 2)
        k4 = a(np.clip(xi + h * k3, 0, 1), tau + h)
        xi = xi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        tau = tau + h
    return np.clip(xi, 0.0, 1.0)


@dataclass
class PathBundle:
    """Quadrature nodes along characteristics from each anchor to its exit.

    ``w`` are signed Gauss weights for ``int_x^{x_j}``; the operators use
    ``int_{x_j}^x = -sum(w * g)``.
    """

    j: int
    x: np.ndarray
    t: np.ndarray
    exit: ExitBatch
    xi: np.ndarray
    omega: np.ndarray
    w: np.ndarray
    ib: np.ndarray
    ia: np.ndarray
    a_nodes: np.ndarray

    def d(self, l: int = 0) -> np.ndarray:
        return np.exp(self.ib - l * self.ia) / self.a_nodes


def build_paths(sys: HyperbolicSystem, j: int, x, t, panels: int = 16, gauss: int = 4,
                substeps: int = 2) -> PathBundle:
    x = np.asarray(x, dtype=float).ravel()
    t = np.asarray(t, dtype=float).ravel()
    ex = exit_points(sys, j, x, t, panels=panels, substeps=substeps * gauss)
    edges = _edges(x, ex.x, panels, sys.breakpoints(j))
    g, gw = np.polynomial.legendre.leggauss(gauss)
    left, right = edges[:, :-1], edges[:, 1:]
    mid = (left + right) / 2
    half = (right - left) / 2
    xi = (mid[:, :, None] + half[:, :, None] * g[None, None, :]).reshape(len(x), -1)
    w = (half[:, :, None] * gw[None, None, :]).reshape(len(x), -1)
    om, ib, ia = march(sys, j, x, t, xi, substeps)
    a_nodes = sys.a[j](xi, om)
    return PathBundle(j, x, t, ex, xi, om, w, ib, ia, a_nodes)


class PathCache:
    """Thread-safe LRU memo of :class:`PathBundle` keyed by component and anchors."""

    def __init__(self, maxsize: int = 16):
        self.maxsize = maxsize
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    @staticmethod
    def key(j, x, t, *params):
        h = hashlib.sha1()
        h.update(np.ascontiguousarray(x, dtype=float).tobytes())
        h.update(np.ascontiguousarray(t, dtype=float).tobytes())
        return (j, np.shape(x), h.hexdigest(), params)

    def get_or_build(self, key, builder):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
        value = builder()
        with self._lock:
            self._data[key] = value
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)
        return value

    def clear(self):
        with self._lock:
            self._data.clear()
