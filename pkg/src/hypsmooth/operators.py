"""Characteristic integral operators B, S, D, F and their compositions.

A *field* is any callable ``u(k, x, t)`` returning component ``k`` at arrays
``x``, ``t`` (a :class:`~hypsmooth.grid.GridFunction` qualifies).  *Boundary
data* is a callable ``bv(j, xb, tau)`` giving component ``j`` at exit points.

With ``l = ctx.order`` the weights are the order-l ones, so the same code
gives B, D, F and their tilde variants.  Every ``apply_*`` takes output axes
``x``, ``t`` and returns a :class:`GridFunction`; the ``eval_*`` functions
work on arbitrary anchor arrays and return shape ``(n, *X.shape)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .characteristics import PathBundle, PathCache, build_paths, exit_points, march
from .grid import GridFunction
from .system import HyperbolicSystem

__all__ = [
    "OperatorContext",
    "BoundaryTrace",
    "eval_B",
    "eval_D",
    "eval_F",
    "eval_D2",
    "eval_DB",
    "apply_B",
    "apply_S",
    "apply_D",
    "apply_F",
    "apply_D2",
    "apply_DB",
    "apply_BRB",
    "source_order1",
    "OperatorField",
]

CHUNK = 8192


@dataclass
class OperatorContext:
    """System plus quadrature settings shared by all operator applications.

    ``panels`` Gauss-Legendre panels of ``gauss`` nodes each are laid along
    every characteristic and split at coefficient breakpoints.
    """

    sys: HyperbolicSystem
    order: int = 0
    panels: int = 8
    gauss: int = 4
    substeps: int = 2
    cache: PathCache = field(default_factory=PathCache)

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if self.panels < 1 or self.gauss < 2:
            raise ValueError("quadrature needs >= 1 panel and >= 2 nodes")

    def paths(self, j: int, X, T, cached: bool = True) -> PathBundle:
        X = np.asarray(X, dtype=float).ravel()
        T = np.asarray(T, dtype=float).ravel()

        def build():
            return build_paths(self.sys, j, X, T, self.panels, self.gauss, self.substeps)

        if not cached:
            return build()
        key = PathCache.key(j, X, T, self.panels, self.gauss, self.substeps)
        return self.cache.get_or_build(key, build)

    def with_order(self, order: int) -> "OperatorContext":
        return OperatorContext(self.sys, order, self.panels, self.gauss, self.substeps, PathCache())


def _anchors(X, T):
    X, T = np.broadcast_arrays(np.asarray(X, dtype=float), np.asarray(T, dtype=float))
    return X.shape, X.ravel(), T.ravel()


def _chunked(fn, X, T, cached):
    """Evaluate ``fn(x, t, cached)`` -> (n, A) over chunks of anchors."""
    if X.size <= CHUNK:
        return fn(X, T, cached)
    parts = [fn(X[i:i + CHUNK], T[i:i + CHUNK], False) for i in range(0, X.size, CHUNK)]
    return np.concatenate(parts, axis=1)


def _on_grid(evaluator, x, t, periodic=False, interp="linear"):
    X, Tm = np.meshgrid(np.asarray(x, float), np.asarray(t, float), indexing="ij")
    return GridFunction(x, t, evaluator(X, Tm), periodic, interp)


# ---------------------------------------------------------------------------
# B and S


def eval_B(ctx: OperatorContext, bv, X, T, cached: bool = True) -> np.ndarray:
    """``(Bu)_j(x,t) = c_j(x_j, x, t) u_j(x_j, omega_j(x_j; x, t))``."""
    shape, X, T = _anchors(X, T)

    def run(x, t, cached):
        out = np.empty((ctx.sys.n, x.size))
        for j in range(ctx.sys.n):
            if cached:
                ex = ctx.paths(j, x, t).exit
            else:
                ex = exit_points(ctx.sys, j, x, t, ctx.panels, ctx.substeps * ctx.gauss)
            out[j] = ex.weight(ctx.order) * bv(j, ex.x, ex.tau)
        return out

    return _chunked(run, X, T, cached).reshape((ctx.sys.n,) + shape)


def apply_B(ctx: OperatorContext, bv, x, t, periodic=False) -> GridFunction:
    return _on_grid(lambda X, T: eval_B(ctx, bv, X, T), x, t, periodic)


class BoundaryTrace:
    """Boundary data of ``S``: ``phi_j(x)`` on the initial line of a half strip
    and ``(Ru)_j(t)`` on the lateral boundary (``S = R`` on full strips)."""

    def __init__(self, sys: HyperbolicSystem, R, phi=None, u=None):
        if sys.domain.has_initial_line and phi is None:
            raise ValueError("initial data phi is required on a half strip")
        self.sys, self.R, self.phi, self.u = sys, R, phi, u

    def __call__(self, j, xb, tau):
        xb = np.asarray(xb, dtype=float)
        tau = np.asarray(tau, dtype=float)
        if not self.sys.domain.has_initial_line:
            return self.R.evaluate(self.u, j, tau)
        T = self.sys.domain.T
        on_initial = tau <= T + 1e-12 * (1 + abs(T))
        out = np.empty(np.broadcast_shapes(xb.shape, tau.shape))
        if on_initial.any():
            out[on_initial] = self.phi(j, xb[on_initial])
        if (~on_initial).any():
            out[~on_initial] = self.R.evaluate(self.u, j, tau[~on_initial])
        return out


def apply_S(ctx: OperatorContext, R, phi=None, u=None) -> BoundaryTrace:
    """Boundary data bundle combining ``R`` with initial data ``phi(j, x)``."""
    return BoundaryTrace(ctx.sys, R, phi, u)


# ---------------------------------------------------------------------------
# D and F


def _coupling_sum(sys, j, u, xi, om):
    acc = np.zeros_like(xi)
    for k in range(sys.n):
        if k == j or sys.b[j][k].is_zero:
            continue
        acc += sys.b[j][k](xi, om) * u(k, xi, om)
    return acc


def eval_D(ctx: OperatorContext, u, X, T, cached: bool = True) -> np.ndarray:
    """``(Du)_j = -int_{x_j}^x d_j sum_{k != j} b_jk u_k`` along characteristic j."""
    shape, X, T = _anchors(X, T)
    sys = ctx.sys

    def run(x, t, cached):
        out = np.zeros((sys.n, x.size))
        for j in range(sys.n):
            if not any(not sys.b[j][k].is_zero for k in range(sys.n) if k != j):
                continue
            p = ctx.paths(j, x, t, cached)
            g = _coupling_sum(sys, j, u, p.xi, p.omega)
            out[j] = np.sum(p.w * p.d(ctx.order) * g, axis=1)
        return out

    return _chunked(run, X, T, cached).reshape((sys.n,) + shape)


def eval_F(ctx: OperatorContext, X, T, f=None, cached: bool = True) -> np.ndarray:
    """``(Ff)_j = int_{x_j}^x d_j f_j``; ``f(j, x, t)`` defaults to the system's f."""
    shape, X, T = _anchors(X, T)
    sys = ctx.sys
    if f is None:
        if all(c.is_zero for c in sys.f):
            return np.zeros((sys.n,) + shape)
        f = lambda j, x, t: sys.f[j](x, t)  # noqa: E731

    def run(x, t, cached):
        out = np.zeros((sys.n, x.size))
        for j in range(sys.n):
            p = ctx.paths(j, x, t, cached)
            out[j] = -np.sum(p.w * p.d(ctx.order) * f(j, p.xi, p.omega), axis=1)
        return out

    return _chunked(run, X, T, cached).reshape((sys.n,) + shape)


def apply_D(ctx: OperatorContext, u, x, t, periodic=False) -> GridFunction:
    return _on_grid(lambda X, T: eval_D(ctx, u, X, T), x, t, periodic)


def apply_F(ctx: OperatorContext, x, t, f=None, periodic=False) -> GridFunction:
    return _on_grid(lambda X, T: eval_F(ctx, X, T, f), x, t, periodic)


class OperatorField:
    """Exact off-grid evaluation of ``Du``, ``Bh`` or ``Ff`` as a field, so
    that compositions avoid interpolating an intermediate grid."""

    def __init__(self, ctx: OperatorContext, kind: str, arg):
        self.ctx, self.kind, self.arg = ctx, kind, arg

    def __call__(self, k, x, t):
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        if self.kind == "D":
            vals = eval_D(self.ctx, self.arg, x, t, cached=False)
        elif self.kind == "B":
            vals = eval_B(self.ctx, self.arg, x, t, cached=False)
        elif self.kind == "F":
            vals = eval_F(self.ctx, x, t, self.arg, cached=False)
        else:
            raise ValueError(self.kind)
        return vals[k]


def eval_D2(ctx: OperatorContext, u, X, T, method: str = "compose") -> np.ndarray:
    """``D(Du)``.  ``method="reordered"`` evaluates the double integral with the
    order of integration exchanged (lateral exits only)."""
    if method == "compose":
        return eval_D(ctx, OperatorField(ctx, "D", u), X, T)
    if method == "reordered":
        return _d2_reordered(ctx, u, X, T)
    raise ValueError(f"unknown method {method!r}")


def apply_D2(ctx: OperatorContext, u, x, t, method: str = "compose", periodic=False) -> GridFunction:
    return _on_grid(lambda X, T: eval_D2(ctx, u, X, T, method), x, t, periodic)


def eval_DB(ctx: OperatorContext, bv, X, T) -> np.ndarray:
    """``(DBh)_j = int_x^{x_j} d_j sum_k b_jk c_k(x_k, .) h_k(x_k, omega_k(x_k; .))``,
    a single integral with the shift B evaluated exactly at each node."""
    return eval_D(ctx, OperatorField(ctx, "B", bv), X, T)


def apply_DB(ctx: OperatorContext, bv, x, t, periodic=False) -> GridFunction:
    return _on_grid(lambda X, T: eval_DB(ctx, bv, X, T), x, t, periodic)


def _gauss_segments(lo, hi, panels, gauss):
    """Nodes and weights on [lo, hi] (arrays of equal shape), appended axis."""
    g, gw = np.polynomial.legendre.leggauss(gauss)
    s = np.linspace(0.0, 1.0, panels + 1)
    left = lo[..., None] + (hi - lo)[..., None] * s[:-1]
    h = (hi - lo)[..., None] / panels
    nodes = (left[..., None] + h[..., None] * (g + 1) / 2).reshape(lo.shape + (-1,))
    w = np.broadcast_to(h[..., None] * gw / 2, left.shape + (gauss,)).reshape(lo.shape + (-1,))
    return nodes, w


def _reordered_piece(ctx, u, X, T, j, k, lo_j, hi_j, eta_lo, eta_hi):
    """Double integral over eta in [eta_lo, eta_hi] (outer) and the matching
    xi range (inner) for one pair ``j, k``."""
    sys = ctx.sys
    P, G = ctx.panels, ctx.gauss
    eta, weta = _gauss_segments(eta_lo, eta_hi, P, G)  # (A, Q)
    A, Q = eta.shape
    if k < sys.m:
        xlo, xhi = np.maximum(eta, lo_j[:, None]), np.broadcast_to(hi_j[:, None], eta.shape)
    else:
        xlo, xhi = np.broadcast_to(lo_j[:, None], eta.shape), np.minimum(eta, hi_j[:, None])
    xi, wxi = _gauss_segments(xlo, xhi, P, G)  # (A, Q, Q2)
    Q2 = xi.shape[-1]
    # omega_j(xi; x, t) and weights along characteristic j
    om_j, ib_j, ia_j = march(sys, j, np.repeat(X, Q * Q2), np.repeat(T, Q * Q2), xi.reshape(-1, 1), 16)
    om_j, ib_j, ia_j = om_j[:, 0], ib_j[:, 0], ia_j[:, 0]
    xi_f = xi.reshape(-1)
    d_j = np.exp(ib_j - ctx.order * ia_j) / sys.a[j](xi_f, om_j)
    bjk = sys.b[j][k](xi_f, om_j)
    # characteristic k from (xi, omega_j) to eta
    eta_f = np.repeat(eta.reshape(-1), Q2)
    om_k, ib_k, ia_k = march(sys, k, xi_f, om_j, eta_f[:, None], 16)
    om_k, ib_k, ia_k = om_k[:, 0], ib_k[:, 0], ia_k[:, 0]
    d_k = np.exp(ib_k - ctx.order * ia_k) / sys.a[k](eta_f, om_k)
    inner = np.zeros_like(eta_f)
    for i in range(sys.n):
        if i == k or sys.b[k][i].is_zero:
            continue
        inner += sys.b[k][i](eta_f, om_k) * u(i, eta_f, om_k)
    integrand = (d_j * bjk * d_k * inner).reshape(A, Q, Q2)
    return np.sum(weta * np.sum(wxi * integrand, axis=2), axis=1)


def _d2_reordered(ctx, u, X, T):
    """Oracle: exchange the order of the double integral in D(Du).

    ``D(Du)_j = sum_k sum_{i != k} int_{xi: x_j -> x} int_{eta: x_k -> xi} G``
    with ``G = d_j b_jk(xi) d_k(eta; xi) b_ki(eta) u_i(eta)``.  For fixed
    exits the region is rewritten as eta outer, xi inner; the eta range is
    split where the inner lower or upper limit switches to eta, so each piece
    has a smooth integrand.
    """
    sys = ctx.sys
    if sys.domain.has_initial_line:
        raise ValueError("the reordered double integral needs lateral exits (full or periodic strip)")
    shape, X, T = _anchors(X, T)
    out = np.zeros((sys.n, X.size))
    zero, one = np.zeros_like(X), np.ones_like(X)
    for j in range(sys.n):
        xj = 0.0 if j < sys.m else 1.0
        sj = 1.0 if j < sys.m else -1.0
        lo_j = np.minimum(X, xj)
        hi_j = np.maximum(X, xj)
        for k in range(sys.n):
            if k == j or sys.b[j][k].is_zero:
                continue
            sk = 1.0 if k < sys.m else -1.0
            pieces = [(zero, lo_j), (lo_j, hi_j)] if k < sys.m else [(lo_j, hi_j), (hi_j, one)]
            for eta_lo, eta_hi in pieces:
                out[j] += sj * sk * _reordered_piece(ctx, u, X, T, j, k, lo_j, hi_j, eta_lo, eta_hi)
    return out.reshape((sys.n,) + shape)


# ---------------------------------------------------------------------------
# population shift and the order-one source


def apply_BRB(mu: float, gamma, h, history, x, t, nodes: int = 64) -> np.ndarray:
    """``(BRBu)(x,t) = e^{-mu x} h(int_0^1 gamma(xi) e^{-mu xi} u(0, t-x-xi) dxi)``.

    ``history(tau)`` is the boundary trace ``u(0, tau)``; it must cover
    ``[t - x - 1, t - x]``.
    """
    x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
    g, gw = np.polynomial.legendre.leggauss(nodes)
    xi = (g + 1) / 2
    w = gw / 2
    s = t[..., None] - x[..., None] - xi
    integral = np.sum(w * gamma(xi) * np.exp(-mu * xi) * history(s), axis=-1)
    return np.exp(-mu * x) * h(integral)


def source_order1(sys: HyperbolicSystem, u, fdt=None):
    """Right-hand side ``G_j`` of the equation for ``v = d_t u``::

        G_j = d_t f_j - sum_k d_t b_jk u_k + (d_t a_j / a_j)(sum_k b_jk u_k - f_j)

    Returned as a field ``G(j, x, t)``.  ``fdt(j, x, t)`` overrides ``d_t f``.
    """

    def G(j, x, t):
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        fj = sys.f[j](x, t)
        out = fdt(j, x, t) if fdt is not None else sys.f[j].dt(x, t)
        bu = np.zeros_like(x)
        for k in range(sys.n):
            if sys.b[j][k].is_zero:
                continue
            uk = u(k, x, t)
            out = out - sys.b[j][k].dt(x, t) * uk
            bu = bu + sys.b[j][k](x, t) * uk
        if not sys.a[j].time_independent:
            out = out + sys.a[j].dt(x, t) / sys.a[j](x, t) * (bu - fj)
        return out

    return G
