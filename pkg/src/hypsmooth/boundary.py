"""Boundary operators ``R``: each maps a field ``u`` to lateral boundary data
``(Ru)_j(tau)`` on the inflow side of component ``j`` (x = 0 for j < m,
x = 1 otherwise)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import InterpolatedUnivariateSpline

from .grid import GridFunction
from .system import PERIOD, HyperbolicSystem

__all__ = [
    "ClassicalTrace",
    "LinearReflection",
    "IntegralAge",
    "DissipativeNonlinear",
    "PopulationModel",
    "jacobian",
]


@dataclass(frozen=True)
class ClassicalTrace:
    """``u_j(x_j, t) = h_j(t)``; ``h`` holds n vectorized functions of t."""

    h: Sequence[Callable]

    def evaluate(self, u, j, tau):
        tau = np.asarray(tau, dtype=float)
        return np.broadcast_to(np.asarray(self.h[j](tau), dtype=float), tau.shape).copy()

    def validate(self, sys: HyperbolicSystem):
        if len(self.h) != sys.n:
            raise ValueError(f"classical traces need {sys.n} functions, got {len(self.h)}")


@dataclass(frozen=True)
class LinearReflection:
    """``u_j(0,t) = sum_{k >= m} r0[j, k-m] u_k(0,t)`` for ``j < m`` and
    ``u_j(1,t) = sum_{k < m} r1[j-m, k] u_k(1,t)`` for ``j >= m``."""

    r0: np.ndarray  # (m, n-m)
    r1: np.ndarray  # (n-m, m)

    def __post_init__(self):
        object.__setattr__(self, "r0", np.atleast_2d(np.asarray(self.r0, dtype=float)))
        object.__setattr__(self, "r1", np.atleast_2d(np.asarray(self.r1, dtype=float)))

    @property
    def m(self) -> int:
        return self.r0.shape[0]

    @property
    def n(self) -> int:
        return self.r0.shape[0] + self.r1.shape[0]

    def validate(self, sys: HyperbolicSystem):
        m, n = sys.m, sys.n
        if self.r0.shape != (m, n - m) or self.r1.shape != (n - m, m):
            raise ValueError(f"reflection matrices must be {m}x{n - m} and {n - m}x{m}, "
                             f"got {self.r0.shape} and {self.r1.shape}")

    def evaluate(self, u, j, tau):
        tau = np.asarray(tau, dtype=float)
        m, n = self.m, self.n
        out = np.zeros(tau.shape)
        if j < m:
            for k in range(m, n):
                if self.r0[j, k - m] != 0.0:
                    out += self.r0[j, k - m] * u(k, np.zeros_like(tau), tau)
        else:
            for k in range(m):
                if self.r1[j - m, k] != 0.0:
                    out += self.r1[j - m, k] * u(k, np.ones_like(tau), tau)
        return out


def _row_functional(u: GridFunction, k: int, weights: np.ndarray):
    """``tau -> sum_l weights[l] u_k(x_l, tau)``, consistent with ``u``'s
    interpolation (linear or cubic spline in t along grid rows)."""
    I = weights @ u.values[k]
    t = u.t
    if u.periodic:
        pad = min(8, t.size)
        tt = np.concatenate([t[-pad:] - PERIOD, t, t[:pad + 1] + PERIOD])
        II = np.concatenate([I[-pad:], I, I[:pad + 1]])
    else:
        tt, II = t, I
    if u.interp == "cubic" and tt.size > 3:
        spline = InterpolatedUnivariateSpline(tt, II, k=3)
    else:
        spline = None

    def call(tau):
        tau = np.asarray(tau, dtype=float)
        if u.periodic:
            tau = t[0] + np.mod(tau - t[0], PERIOD)
        if spline is not None:
            return spline(np.clip(tau, tt[0], tt[-1]))
        return np.interp(tau, tt, II)

    return call


@dataclass
class IntegralAge:
    """Scalar birth law ``u(0,t) = h(int_0^1 gamma(x) u(x,t) dx)``.

    The x-integral uses the trapezoid rule on the field's own x-grid; for
    other fields Gauss-Legendre with ``nodes`` points is used.
    """

    h: Callable
    gamma: Callable
    nodes: int = 64
    _memo: dict = field(default_factory=dict, repr=False, compare=False)

    def validate(self, sys: HyperbolicSystem):
        if sys.n != 1 or sys.m != 1:
            raise ValueError("the integral-age law applies to scalar right-moving systems")

    def moment(self, u, tau):
        tau = np.asarray(tau, dtype=float)
        if isinstance(u, GridFunction):
            key = id(u)
            if self._memo.get("key") != key:
                w = np.zeros(u.x.size)
                dx = np.diff(u.x)
                w[:-1] += dx / 2
                w[1:] += dx / 2
                w *= self.gamma(u.x)
                self._memo.clear()
                self._memo.update(key=key, fn=_row_functional(u, 0, w), ref=u)
            return self._memo["fn"](tau)
        g, gw = np.polynomial.legendre.leggauss(self.nodes)
        xs = (g + 1) / 2
        vals = u(0, np.broadcast_to(xs, tau.shape + xs.shape), tau[..., None])
        return np.sum(gw / 2 * self.gamma(xs) * vals, axis=-1)

    def evaluate(self, u, j, tau):
        return np.asarray(self.h(self.moment(u, tau)), dtype=float)


@dataclass(frozen=True)
class DissipativeNonlinear:
    """``u_j(x_j, t) = h_j(z(t))`` with ``z = (u_1(1,t),..,u_m(1,t), u_{m+1}(0,t),..,u_n(0,t))``.

    ``h`` maps an array of shape (n, N) to (n, N).
    """

    h: Callable
    m: int

    def validate(self, sys: HyperbolicSystem):
        if sys.m != self.m:
            raise ValueError("dissipative law built for a different m")

    def outgoing(self, u, tau):
        tau = np.asarray(tau, dtype=float)
        n = u.n
        z = np.empty((n,) + tau.shape)
        for k in range(n):
            xb = 1.0 if k < self.m else 0.0
            z[k] = u(k, np.full(tau.shape, xb), tau)
        return z

    def evaluate(self, u, j, tau):
        z = self.outgoing(u, tau)
        flat = z.reshape(z.shape[0], -1)
        return np.asarray(self.h(flat), dtype=float)[j].reshape(np.shape(tau))


def jacobian(h: Callable, z: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``h`` at the columns of ``z`` (n, N);
    returns (n, n, N) with ``J[j, k] = d h_j / d z_k``."""
    z = np.asarray(z, dtype=float)
    n, N = z.shape
    J = np.empty((n, n, N))
    for k in range(n):
        e = np.zeros((n, N))
        e[k] = step * np.maximum(1.0, np.abs(z[k]))
        J[:, k] = (np.asarray(h(z + e)) - np.asarray(h(z - e))) / (2 * e[k])
    if not np.all(np.isfinite(J)):
        raise FloatingPointError("non-finite finite-difference Jacobian")
    return J


@dataclass(frozen=True)
class PopulationModel:
    """Age-structured model ``(d_t + d_x + mu) u = 0`` with birth law
    ``u(0,t) = h(int_0^1 gamma(x) u(x,t) dx)``."""

    mu: float
    gamma: Callable
    h: Callable

    def system(self, domain) -> HyperbolicSystem:
        return HyperbolicSystem.build(1, 1, [1.0], [[self.mu]], domain=domain)

    def boundary(self) -> IntegralAge:
        return IntegralAge(self.h, self.gamma)
