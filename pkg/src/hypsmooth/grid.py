"""Tensor-grid fields with off-grid interpolation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .system import PERIOD

__all__ = ["GridFunction", "WindowError"]


class WindowError(ValueError):
    """Evaluation requested outside the stored time window."""

    def __init__(self, needed: tuple[float, float], stored: tuple[float, float]):
        super().__init__(f"need values on t in [{needed[0]:.6g}, {needed[1]:.6g}] "
                         f"but the field covers [{stored[0]:.6g}, {stored[1]:.6g}]")
        self.needed = needed
        self.stored = stored


@dataclass
class GridFunction:
    """``n``-component field sampled on ``x`` (Nx,) times ``t`` (Nt,).

    ``values`` has shape (n, Nx, Nt).  For periodic fields the grid is
    ``t_k = t0 + k * 2 pi / Nt`` and the node at ``t0 + 2 pi`` is implied.
    ``interp`` is ``"linear"`` (bilinear) or ``"cubic"`` (bicubic spline).
    """

    x: np.ndarray
    t: np.ndarray
    values: np.ndarray
    periodic: bool = False
    interp: str = "linear"
    _splines: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[None]
        if self.values.shape[1:] != (self.x.size, self.t.size):
            raise ValueError(f"values shape {self.values.shape} does not match grid "
                             f"({self.x.size}, {self.t.size})")
        if self.interp not in ("linear", "cubic"):
            raise ValueError(f"unknown interpolation {self.interp!r}")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def window(self) -> tuple[float, float]:
        if self.periodic:
            return (-np.inf, np.inf)
        return float(self.t[0]), float(self.t[-1])

    @classmethod
    def sample(cls, fn, x, t, n: int | None = None, periodic=False, interp="linear") -> "GridFunction":
        """Sample ``fn(k, X, T)`` (or ``fn(X, T)`` returning (n, ...)) on the grid."""
        X, Tm = np.meshgrid(np.asarray(x, float), np.asarray(t, float), indexing="ij")
        if n is None:
            vals = np.asarray(fn(X, Tm), dtype=float)
            vals = vals if vals.ndim == 3 else vals[None]
        else:
            vals = np.stack([np.broadcast_to(fn(k, X, Tm), X.shape) for k in range(n)])
        return cls(x, t, vals, periodic, interp)

    @classmethod
    def periodic_grid(cls, nx: int, nt: int) -> tuple[np.ndarray, np.ndarray]:
        return np.linspace(0.0, 1.0, nx), np.arange(nt) * (PERIOD / nt)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.x, self.t, values, self.periodic, self.interp)

    def with_interp(self, interp: str) -> "GridFunction":
        return GridFunction(self.x, self.t, self.values, self.periodic, interp)

    # -- evaluation ---------------------------------------------------------

    def _check_window(self, t):
        if self.periodic or np.size(t) == 0:
            return
        lo, hi = float(np.min(t)), float(np.max(t))
        t0, t1 = self.window
        slack = 1e-9 * (1 + abs(t0) + abs(t1))
        if lo < t0 - slack or hi > t1 + slack:
            raise WindowError((lo, hi), (t0, t1))

    def _wrapped(self):
        """Time axis and values with the periodic closing node appended."""
        t = np.append(self.t, self.t[0] + PERIOD)
        v = np.concatenate([self.values, self.values[:, :, :1]], axis=2)
        return t, v

    def __call__(self, k: int, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        x, t = np.broadcast_arrays(x, t)
        self._check_window(t)
        if self.interp == "cubic":
            return self._cubic(k, x, t)
        return self._bilinear(k, x, t)

    def _bilinear(self, k, x, t):
        gx = self.x
        if self.periodic:
            gt, v = self._wrapped()
            t = gt[0] + np.mod(t - gt[0], PERIOD)
        else:
            gt, v = self.t, self.values
        v = v[k]
        xc = np.clip(x, gx[0], gx[-1])
        tc = np.clip(t, gt[0], gt[-1])
        i = np.clip(np.searchsorted(gx, xc, side="right") - 1, 0, gx.size - 2)
        m = np.clip(np.searchsorted(gt, tc, side="right") - 1, 0, gt.size - 2)
        sx = (xc - gx[i]) / (gx[i + 1] - gx[i])
        st = (tc - gt[m]) / (gt[m + 1] - gt[m])
        return ((1 - sx) * (1 - st) * v[i, m] + sx * (1 - st) * v[i + 1, m]
                + (1 - sx) * st * v[i, m + 1] + sx * st * v[i + 1, m + 1])

    def _spline(self, k):
        if k not in self._splines:
            if self.periodic:
                # pad by a few periods' worth of nodes so the spline is periodic inside
                pad = min(8, self.t.size)
                gt = np.concatenate([self.t[-pad:] - PERIOD, self.t, self.t[:pad + 1] + PERIOD])
                v = np.concatenate([self.values[k][:, -pad:], self.values[k], self.values[k][:, :pad + 1]], axis=1)
            else:
                gt, v = self.t, self.values[k]
            kx = min(3, self.x.size - 1)
            kt = min(3, gt.size - 1)
            self._splines[k] = RectBivariateSpline(self.x, gt, v, kx=kx, ky=kt, s=0)
        return self._splines[k]

    def _cubic(self, k, x, t):
        if self.periodic:
            t = self.t[0] + np.mod(t - self.t[0], PERIOD)
        else:
            t = np.clip(t, self.t[0], self.t[-1])
        x = np.clip(x, self.x[0], self.x[-1])
        return self._spline(k).ev(x.ravel(), t.ravel()).reshape(x.shape)

    # -- CSV ----------------------------------------------------------------

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "t"] + [f"u_{k + 1}" for k in range(self.n)])
            for i in range(self.x.size):
                for m in range(self.t.size):
                    w.writerow([repr(float(self.x[i])), repr(float(self.t[m]))]
                               + [repr(float(self.values[k, i, m])) for k in range(self.n)])

    @classmethod
    def from_csv(cls, path, periodic=False, interp="linear") -> "GridFunction":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        x = np.unique(data[:, 0])
        t = np.unique(data[:, 1])
        if data.shape[0] != x.size * t.size:
            raise ValueError(f"{path}: rows do not form a tensor grid")
        ix = np.searchsorted(x, data[:, 0])
        it = np.searchsorted(t, data[:, 1])
        vals = np.empty((data.shape[1] - 2, x.size, t.size))
        vals[:, ix, it] = data[:, 2:].T
        return cls(x, t, vals, periodic, interp)
