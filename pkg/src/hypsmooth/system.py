"""Hyperbolic systems ``(d_t + a d_x + b) u = f`` on 0 < x < 1 and checks of
the structural hypotheses (sign pattern, non-degeneracy, Levy-type
factorization of the coupling, BV regularity of the factor)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import CoefficientField

__all__ = [
    "TimeDomain",
    "HalfStrip",
    "FullStrip",
    "PeriodicStrip",
    "HyperbolicSystem",
    "ConditionReport",
    "LevyFactorization",
    "CoefficientError",
    "check_hyperbolicity",
    "check_levy",
    "check_bv_factorization",
    "PERIOD",
]

PERIOD = 2 * np.pi


class CoefficientError(ValueError):
    """A coefficient could not be evaluated (non-finite or raised) at a point."""

    def __init__(self, message: str, location: tuple[float, float] | None = None):
        super().__init__(message)
        self.location = location


@dataclass(frozen=True)
class TimeDomain:
    kind: str  # "half" | "full" | "periodic"
    T: float = 0.0

    def __post_init__(self):
        if self.kind not in ("half", "full", "periodic"):
            raise ValueError(f"unknown time domain {self.kind!r}")

    @property
    def periodic(self) -> bool:
        return self.kind == "periodic"

    @property
    def has_initial_line(self) -> bool:
        return self.kind == "half"

    def default_window(self, length: float = PERIOD) -> tuple[float, float]:
        start = self.T if self.kind == "half" else 0.0
        return start, start + length


def HalfStrip(T: float = 0.0) -> TimeDomain:
    return TimeDomain("half", float(T))


def FullStrip() -> TimeDomain:
    return TimeDomain("full")


def PeriodicStrip() -> TimeDomain:
    return TimeDomain("periodic")


def _coerce_list(values, n, name):
    if values is None:
        return tuple(CoefficientField.constant(0.0) for _ in range(n))
    if len(values) != n:
        raise ValueError(f"{name} needs {n} entries, got {len(values)}")
    return tuple(CoefficientField.coerce(v) for v in values)


@dataclass(frozen=True)
class HyperbolicSystem:
    """Coefficients of the system.  Components ``0..m-1`` move right (a > 0),
    components ``m..n-1`` move left (a < 0)."""

    n: int
    m: int
    a: tuple[CoefficientField, ...]
    b: tuple[tuple[CoefficientField, ...], ...]
    f: tuple[CoefficientField, ...]
    domain: TimeDomain = field(default_factory=FullStrip)

    def __post_init__(self):
        if not 0 <= self.m <= self.n or self.n < 1:
            raise ValueError(f"need 0 <= m <= n and n >= 1, got n={self.n}, m={self.m}")
        if len(self.a) != self.n or len(self.f) != self.n or len(self.b) != self.n:
            raise ValueError("coefficient arrays do not match n")
        if any(len(row) != self.n for row in self.b):
            raise ValueError("b must be n x n")
        if self.domain.periodic:
            xs = np.linspace(0, 1, 7)[:, None]
            ts = np.linspace(0, PERIOD, 9)[None, :]
            for c in self.fields():
                if c.time_independent:
                    continue
                if not np.allclose(c(xs, ts), c(xs, ts + PERIOD), atol=1e-9, rtol=1e-9):
                    raise ValueError(f"coefficient {c.source!r} is not 2*pi-periodic in t")

    @classmethod
    def build(cls, n: int, m: int, a: Sequence, b: Sequence[Sequence] | None = None,
              f: Sequence | None = None, domain: TimeDomain | None = None) -> "HyperbolicSystem":
        """Convenience constructor accepting numbers, grammar strings or callables."""
        a_ = _coerce_list(a, n, "a")
        if b is None:
            b_ = tuple(tuple(CoefficientField.constant(0.0) for _ in range(n)) for _ in range(n))
        else:
            if len(b) != n:
                raise ValueError("b must be n x n")
            b_ = tuple(_coerce_list(row, n, "b row") for row in b)
        return cls(n, m, a_, b_, _coerce_list(f, n, "f"), domain or FullStrip())

    def fields(self):
        yield from self.a
        for row in self.b:
            yield from row
        yield from self.f

    @property
    def time_independent(self) -> bool:
        return all(c.time_independent for c in self.fields())

    def sign(self, j: int) -> float:
        return 1.0 if j < self.m else -1.0

    def breakpoints(self, j: int | None = None) -> tuple[float, ...]:
        """x-breakpoints relevant along characteristics of component ``j``
        (all coefficients when ``j`` is None)."""
        if j is None:
            src = list(self.fields())
        else:
            src = [self.a[j], *self.b[j], self.f[j]]
        return tuple(sorted({bp for c in src for bp in c.breakpoints}))

    def has_coupling(self) -> bool:
        return any(not self.b[j][k].is_zero for j in range(self.n) for k in range(self.n) if j != k)

    def with_domain(self, domain: TimeDomain) -> "HyperbolicSystem":
        return HyperbolicSystem(self.n, self.m, self.a, self.b, self.f, domain)

    def with_f(self, f: Sequence) -> "HyperbolicSystem":
        return HyperbolicSystem(self.n, self.m, self.a, self.b, _coerce_list(f, self.n, "f"), self.domain)

    def scaled_b(self, lam: float) -> "HyperbolicSystem":
        """System with the whole matrix ``b`` multiplied by ``lam``."""
        b = tuple(
            tuple(CoefficientField.from_callable(lambda x, t, c=c: lam * c(x, t), c.time_independent, c.breakpoints)
                  if not c.is_zero else c for c in row)
            for row in self.b
        )
        return HyperbolicSystem(self.n, self.m, self.a, b, self.f, self.domain)

    def max_speed(self, window: tuple[float, float] | None = None, samples: int = 33) -> float:
        xs, ts = _grid(self, (samples, samples), window)
        return max(float(np.max(np.abs(a(xs, ts)))) for a in self.a)


def _grid(sys: HyperbolicSystem, grid, window=None):
    nx, nt = (grid, grid) if np.isscalar(grid) else grid
    if nx < 2 or nt < 2:
        raise ValueError("sampling grid needs at least 2 points per axis")
    t0, t1 = window if window is not None else sys.domain.default_window()
    xs = np.linspace(0.0, 1.0, int(nx))[:, None]
    ts = np.linspace(t0, t1, int(nt))[None, :]
    return xs, ts


def _evaluate(c: CoefficientField, xs, ts, what: str) -> np.ndarray:
    try:
        with np.errstate(all="ignore"):
            vals = np.broadcast_to(c(xs, ts), np.broadcast_shapes(xs.shape, ts.shape))
    except Exception as exc:  # noqa: BLE001 - surfaced with location below
        raise CoefficientError(f"{what} failed to evaluate: {exc}") from exc
    bad = ~np.isfinite(vals)
    if bad.any():
        i, k = np.argwhere(bad)[0]
        loc = (float(xs[i, 0]), float(ts[0, k]))
        raise CoefficientError(f"{what} is not finite at (x, t) = {loc}", loc)
    return vals


@dataclass
class ConditionReport:
    l1_margin: float
    l2_margin: float
    l1_witness: tuple[float, float, int]
    l2_witness: tuple[float, float, int]
    grid: tuple[int, int]
    window: tuple[float, float]

    @property
    def passed(self) -> bool:
        return self.l1_margin > 0 and self.l2_margin > 0

    def to_dict(self) -> dict:
        return {
            "l1_margin": self.l1_margin,
            "l2_margin": self.l2_margin,
            "l1_witness": {"x": self.l1_witness[0], "t": self.l1_witness[1], "component": self.l1_witness[2]},
            "l2_witness": {"x": self.l2_witness[0], "t": self.l2_witness[1], "component": self.l2_witness[2]},
            "grid": list(self.grid),
            "window": list(self.window),
            "passed": self.passed,
        }


def check_hyperbolicity(sys: HyperbolicSystem, grid=(64, 64), window=None) -> ConditionReport:
    """Sign pattern and uniform non-degeneracy of the speeds on a sample grid.

    ``l1_margin`` is ``min_j min_grid sign_j * a_j`` and ``l2_margin`` is
    ``min_j min_grid |a_j|``; each comes with the witnessing sample point.
    """
    xs, ts = _grid(sys, grid, window)
    l1 = (np.inf, (0.0, 0.0, -1))
    l2 = (np.inf, (0.0, 0.0, -1))
    for j, a in enumerate(sys.a):
        vals = _evaluate(a, xs, ts, f"a[{j}]")
        signed = sys.sign(j) * vals
        i, k = np.unravel_index(np.argmin(signed), signed.shape)
        if signed[i, k] < l1[0]:
            l1 = (float(signed[i, k]), (float(xs[i, 0]), float(ts[0, k]), j))
        mag = np.abs(vals)
        i, k = np.unravel_index(np.argmin(mag), mag.shape)
        if mag[i, k] < l2[0]:
            l2 = (float(mag[i, k]), (float(xs[i, 0]), float(ts[0, k]), j))
    return ConditionReport(l1[0], l2[0], l1[1], l2[1], (xs.shape[0], ts.shape[1]),
                           (float(ts[0, 0]), float(ts[0, -1])))


@dataclass
class LevyFactorization:
    """Sampled factor ``p`` with ``b_jk = p_jk (a_k - a_j)`` (or the weighted
    variant) on a grid.  ``p[j, j]`` is unused and kept at zero."""

    p: np.ndarray  # (n, n, nx, nt)
    defect: float
    bounded: bool
    x: np.ndarray
    t: np.ndarray
    bv_norms: np.ndarray | None = None
    convention: str = "levy"
    bv_ok: bool | None = None
    tolerance: float = 1e-10

    @property
    def passed(self) -> bool:
        ok = self.defect <= self.tolerance and self.bounded
        return ok and (self.bv_ok is not False)

    def sup(self) -> np.ndarray:
        return np.max(np.abs(self.p), axis=(2, 3))

    def to_dict(self) -> dict:
        out = {"defect": self.defect, "bounded": self.bounded, "sup_p": self.sup().tolist(),
               "convention": self.convention, "passed": self.passed}
        if self.bv_norms is not None:
            out["bv_norms"] = self.bv_norms.tolist()
            out["bv_ok"] = self.bv_ok
        return out


def _coefficient_scale(sys, xs, ts) -> float:
    return max(float(np.max(np.abs(_evaluate(a, xs, ts, "a")))) for a in sys.a)


def _factor(sys, xs, ts, eps_sep, tol, convention, p_cap):
    n = sys.n
    avals = [_evaluate(sys.a[j], xs, ts, f"a[{j}]") for j in range(n)]
    shape = np.broadcast_shapes(xs.shape, ts.shape)
    p = np.zeros((n, n) + shape)
    defect = 0.0
    for j in range(n):
        for k in range(n):
            if j == k:
                continue
            bjk = np.broadcast_to(_evaluate(sys.b[j][k], xs, ts, f"b[{j}][{k}]"), shape)
            if convention == "levy":
                num, den = bjk, avals[k] - avals[j]
            elif convention == "weighted":
                num, den = avals[k] * bjk, avals[j] - avals[k]
            else:
                raise ValueError(f"unknown convention {convention!r}")
            den = np.broadcast_to(den, shape)
            sep = np.abs(den) > eps_sep
            with np.errstate(divide="ignore", invalid="ignore"):
                p[j, k] = np.where(sep, num / np.where(sep, den, 1.0), 0.0)
            if (~sep).any():
                defect = max(defect, float(np.max(np.abs(num[~sep]))))
    bounded = bool(np.all(np.isfinite(p)) and np.max(np.abs(p), initial=0.0) <= p_cap)
    return p, defect, bounded


def check_levy(sys: HyperbolicSystem, eps_sep: float | None = None, tol: float = 1e-10,
               grid=(64, 64), window=None, p_cap: float = 1e6) -> LevyFactorization:
    """Sampled factorization ``b_jk = p_jk (a_k - a_j)``.

    Where ``|a_k - a_j| <= eps_sep`` the coupling must vanish to ``tol``; the
    largest violation is the defect (zero for admissible systems).
    """
    xs, ts = _grid(sys, grid, window)
    if eps_sep is None:
        eps_sep = 1e-6 * _coefficient_scale(sys, xs, ts)
    p, defect, bounded = _factor(sys, xs, ts, eps_sep, tol, "levy", p_cap)
    return LevyFactorization(p, defect, bounded, xs[:, 0], ts[0], tolerance=tol)


def _total_variation(c_num, x):
    return float(np.sum(np.abs(np.diff(c_num))))


def check_bv_factorization(sys: HyperbolicSystem, eps_sep: float | None = None, tol: float = 1e-10,
                           nx: int = 1025, convention: str = "levy", p_cap: float = 1e6,
                           growth_limit: float = 1.5) -> LevyFactorization:
    """Factorization for time-independent coefficients plus BV norms of ``p``.

    The BV norm of each factor is ``sup |p| + TV(p)``.  Total variation is
    summed over a uniform grid refined by the coefficient breakpoints (with
    samples just left and right of each jump); the estimate is repeated on a
    grid twice as fine and flagged when it keeps growing.

    ``convention`` selects ``"levy"``: ``b_jk = p_jk (a_k - a_j)`` or
    ``"weighted"``: ``a_k b_jk = p_jk (a_j - a_k)``.
    """
    if not sys.time_independent:
        raise ValueError("BV factorization needs time-independent coefficients")

    def sample_grid(npts):
        xs = np.linspace(0.0, 1.0, npts)
        bps = np.array(sys.breakpoints())
        delta = 1e-12
        extra = np.concatenate([bps - delta, bps + delta]) if bps.size else np.empty(0)
        xs = np.unique(np.clip(np.concatenate([xs, extra]), 0.0, 1.0))
        return xs[:, None], np.zeros((1, 1))

    xs, ts = sample_grid(nx)
    if eps_sep is None:
        eps_sep = 1e-6 * _coefficient_scale(sys, xs, ts)
    p, defect, bounded = _factor(sys, xs, ts, eps_sep, tol, convention, p_cap)
    xs2, ts2 = sample_grid(2 * nx - 1)
    p2, _, _ = _factor(sys, xs2, ts2, eps_sep, tol, convention, p_cap)

    n = sys.n
    norms = np.zeros((n, n))
    ok = True
    for j in range(n):
        for k in range(n):
            if j == k:
                continue
            tv1 = _total_variation(p[j, k, :, 0], xs[:, 0])
            tv2 = _total_variation(p2[j, k, :, 0], xs2[:, 0])
            if tv2 > growth_limit * tv1 + 1e-12:
                ok = False
            norms[j, k] = float(np.max(np.abs(p2[j, k]))) + tv2
    return LevyFactorization(p, defect, bounded, xs[:, 0], ts[0], norms, convention, ok, tol)
