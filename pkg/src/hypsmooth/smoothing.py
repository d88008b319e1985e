"""Empirical smoothing diagnostics: singularity tracking along characteristics
and windowed regularity orders from refinement-ratio tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .characteristics import trace
from .solver import SolutionBundle, resolve

__all__ = [
    "SingularityTrack",
    "RegularityProfile",
    "track_singularity",
    "difference_quotients",
    "regularity_profile",
    "smoothing_time",
    "default_windows",
]

GROWTH = 1.6  # about 2**0.7


@dataclass
class SingularityTrack:
    """Jumps of ``u`` and of its x-slope across a characteristic.

    ``segment`` is 0 on the characteristic through ``(x0, T)`` and increases
    each time the track leaves the strip and restarts on the inflow boundary
    of the same family.  ``noise`` is the response of the slope-jump estimator
    to the smooth part of the field (``2 h max |u_xx|`` away from the track).
    """

    component: int
    x0: float
    t: np.ndarray
    position: np.ndarray
    u_jump: np.ndarray
    du_jump: np.ndarray
    segment: np.ndarray
    exit_time: float | None
    truncated: bool
    noise: float

    def after_exit(self) -> np.ndarray:
        return self.segment > 0

    def to_dict(self) -> dict:
        return {
            "component": self.component,
            "x0": self.x0,
            "exit_time": self.exit_time,
            "truncated": self.truncated,
            "noise": self.noise,
            "t": self.t.tolist(),
            "position": self.position.tolist(),
            "u_jump": self.u_jump.tolist(),
            "du_jump": self.du_jump.tolist(),
            "segment": self.segment.tolist(),
        }


def _curve_positions(sys, j, x_start, t_start, times):
    """Abscissa of the j-th characteristic through (x_start, t_start) at the
    given times (NaN once it has left [0, 1]) and its exit time."""
    lo, hi = (x_start, 1.0) if j < sys.m else (0.0, x_start)
    if hi - lo <= 0:
        return np.full(times.shape, np.nan), t_start
    path = trace(sys, j, x_start, t_start, (lo, hi))
    om, xi = path.omega, path.xi
    if j >= sys.m:
        om, xi = om[::-1], xi[::-1]
    pos = np.interp(times, om, xi, left=np.nan, right=np.nan)
    return pos, float(om[-1])


def _one_sided(u_row, x, X):
    """Slopes and extrapolated values left and right of X from node pairs that
    do not straddle X."""
    h = x[1] - x[0]
    i = int(np.floor((X - x[0]) / h + 1e-9))
    on_node = abs(X - x[0] - i * h) <= 1e-9 * h
    li = (i - 1, i)
    ri = (i, i + 1) if on_node else (i + 1, i + 2)
    if li[0] < 0 or ri[1] >= x.size:
        return None
    sL = (u_row[li[1]] - u_row[li[0]]) / h
    sR = (u_row[ri[1]] - u_row[ri[0]]) / h
    uL = u_row[li[1]] + sL * (X - x[li[1]])
    uR = u_row[ri[0]] + sR * (X - x[ri[0]])
    return uR - uL, sR - sL


def track_singularity(bundle: SolutionBundle, x0: float, component: int = 0) -> SingularityTrack:
    """Follow the characteristic of ``component`` through ``(x0, T)`` and
    record one-sided jump estimates of ``u`` and ``d_x u`` at each grid time."""
    sys = bundle.problem.sys
    u = bundle.u
    x, t = u.x, u.t
    j = component
    inflow = 0.0 if j < sys.m else 1.0
    pos = np.full(t.shape, np.nan)
    seg = np.full(t.shape, -1)
    start_x, start_t, s = x0, float(t[0]), 0
    exit_time = None
    while start_t < t[-1] and s < 64:
        p, t_exit = _curve_positions(sys, j, start_x, start_t, t)
        fill = np.isfinite(p) & (t >= start_t) & (seg < 0)
        pos[fill] = p[fill]
        seg[fill] = s
        if s == 0:
            exit_time = t_exit if t_exit <= t[-1] else None
        if t_exit <= start_t:
            break
        start_x, start_t, s = inflow, t_exit, s + 1
    truncated = exit_time is not None

    h = x[1] - x[0]
    uj = np.full(t.shape, np.nan)
    dj = np.full(t.shape, np.nan)
    far = np.ones((x.size, t.size), dtype=bool)
    for k in range(t.size):
        if seg[k] < 0:
            continue
        res = _one_sided(u.values[j, :, k], x, pos[k])
        if res is not None:
            uj[k], dj[k] = res
        far[np.abs(x - pos[k]) <= 3 * h, k] = False
    d2 = np.abs(u.values[j, 2:] - 2 * u.values[j, 1:-1] + u.values[j, :-2]) / h**2
    mask = far[2:] & far[1:-1] & far[:-2]
    curv = float(np.max(d2[mask])) if mask.any() else 0.0
    keep = seg >= 0
    return SingularityTrack(j, x0, t[keep], pos[keep], uj[keep], dj[keep], seg[keep],
                            exit_time, truncated, 2 * h * curv)


# ---------------------------------------------------------------------------


def difference_quotients(values: np.ndarray, hx: float, ht: float, k_max: int) -> np.ndarray:
    """``M_k = max |Delta^k u| / h^k`` over both axes and all components, for
    k = 1..k_max; ``values`` has shape (n, Nx, Nw)."""
    out = np.zeros(k_max)
    for k in range(1, k_max + 1):
        best = 0.0
        if values.shape[1] > k:
            best = max(best, float(np.max(np.abs(np.diff(values, k, axis=1)))) / hx**k)
        if values.shape[2] > k:
            best = max(best, float(np.max(np.abs(np.diff(values, k, axis=2)))) / ht**k)
        out[k - 1] = best
    return out


@dataclass
class RegularityProfile:
    """Measured order per time window.

    Windows are half-open ``(a, b]`` so that singular points on a shared
    edge are attributed to the earlier window.  ``orders[i]`` is the largest
    ``k <= k_max`` such that the difference quotients ``M_1 .. M_{k+1}`` stay bounded under both refinements
    (ratio <= ``growth`` or below round-off level); 0 if even ``M_1`` grows.
    ``tables[i]`` holds ``M_k`` for k = 1..k_max+1 (rows) at each resolution
    (columns); ``ratios[i]`` the successive refinement ratios.
    """

    windows: list[tuple[float, float]]
    orders: list[int]
    tables: list[np.ndarray]
    ratios: list[np.ndarray]
    resolutions: list[tuple[int, int]]
    k_max: int
    growth: float = GROWTH

    def to_dict(self) -> dict:
        return {
            "windows": [list(w) for w in self.windows],
            "orders": list(self.orders),
            "k_max": self.k_max,
            "growth": self.growth,
            "resolutions": [list(r) for r in self.resolutions],
            "tables": [tab.tolist() for tab in self.tables],
            "ratios": [r.tolist() for r in self.ratios],
        }


def default_windows(bundle: SolutionBundle) -> list[tuple[float, float]]:
    """Consecutive windows of one maximal transit time."""
    sys = bundle.problem.sys
    t0, t1 = float(bundle.u.t[0]), float(bundle.u.t[-1])
    xs = np.linspace(0, 1, 33)[:, None]
    ts = np.linspace(t0, t1, 33)[None, :]
    length = max(float(np.max(1.0 / np.abs(a(xs, ts)))) for a in sys.a)
    edges = np.arange(t0, t1 + 1e-12, length)
    return [(float(a), float(min(a + length, t1))) for a in edges[:-1]] or [(t0, t1)]


def _window_values(bundle, window):
    # half-open (a, b]; the first window also keeps the initial line
    t = bundle.u.t
    span = 1e-9 * (1 + abs(window[1]))
    if window[0] <= t[0] + span:
        sel = t <= window[1] + span
    else:
        sel = (t > window[0] + span) & (t <= window[1] + span)
    return bundle.u.values[:, :, sel]


def regularity_profile(bundle: SolutionBundle, windows=None, k_max: int = 3, refinements: int = 2,
                       growth: float = GROWTH, bundles: list[SolutionBundle] | None = None) -> RegularityProfile:
    """Windowed regularity orders from difference quotients at the bundle's
    resolution and ``refinements`` dyadic refinements (re-solved unless
    ``bundles`` supplies them, coarsest first)."""
    if bundles is None:
        bundles = [bundle]
        for _ in range(refinements):
            b = bundles[-1]
            bundles.append(resolve(b, 2 * (b.u.x.size - 1) + 1, 2 * (b.u.t.size - 1) + 1))
    if len(bundles) < 2:
        raise ValueError("need at least one refinement")
    windows = windows or default_windows(bundles[0])
    orders, tables, ratios = [], [], []
    for w in windows:
        cols = []
        floors = []
        for b in bundles:
            hx = b.u.x[1] - b.u.x[0]
            ht = b.u.t[1] - b.u.t[0]
            vals = _window_values(b, w)
            cols.append(difference_quotients(vals, hx, ht, k_max + 1))
            scale = float(np.max(np.abs(vals))) + 1.0
            hmin = min(hx, ht)
            floors.append(np.array([1e3 * np.finfo(float).eps * scale * 2**k / hmin**k
                                    for k in range(1, k_max + 2)]))
        tab = np.stack(cols, axis=1)
        rat = tab[:, 1:] / np.maximum(tab[:, :-1], np.finfo(float).tiny)
        flo = np.stack(floors, axis=1)[:, 1:]
        bounded = np.all((rat <= growth) | (tab[:, 1:] <= flo), axis=1)
        order = 0
        for k in range(1, k_max + 1):
            if np.all(bounded[:k + 1]):
                order = k
            else:
                break
        orders.append(order)
        tables.append(tab)
        ratios.append(rat)
    res = [(b.u.x.size, b.u.t.size) for b in bundles]
    return RegularityProfile(list(windows), orders, tables, ratios, res, k_max, growth)


def smoothing_time(profile: RegularityProfile, k: int) -> float | None:
    """Start of the first window whose measured order is at least ``k``."""
    for w, order in zip(profile.windows, profile.orders):
        if order >= k:
            return w[0]
    return None
