"""Fredholm structure of the time-periodic problem ``(A + B) u = f``.

``A`` is the diagonal part (transport plus ``b_jj``) with the reflection
conditions, ``B`` the off-diagonal coupling.  Where ``A`` is invertible mode by
mode, ``(A + B) A^{-1} = I + D`` with ``D_s = b1 A_s^{-1}``, a block-diagonal
operator on the mode index.  Kernels and cokernels are computed independently
of ``D`` from the boundary matching matrices of the full mode ODE and of its
adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import subspace_angles

from .boundary import LinearReflection
from .fourier import (
    ExponentProfiles,
    FourierField,
    ModeSingularError,
    PanelGrid,
    _coeff_nodes,
    _gap_nullity,
    boundary_matrices,
    exponent_profiles,
    fundamental_matrix,
    iso_margins,
    mode_reflection,
    solve_mode_diagonal,
    solve_mode_full,
)
from .system import PERIOD, HyperbolicSystem

__all__ = [
    "DiscreteOperator",
    "build_discrete_D",
    "ModeReport",
    "FredholmReport",
    "fredholm_solve",
    "ModeSpace",
    "kernel_and_index",
    "adjoint_solve",
]

MARGIN_TOL = 1e-10


class MarginError(ValueError):
    pass


@dataclass
class DiscreteOperator:
    """Lazily assembled mode blocks of ``D`` on a panel grid.

    Blocks act on stacked vectors ``(v_1(x_1..x_N), .., v_n(x_1..x_N))``.
    :meth:`weighted` returns the block in L2-orthonormal coordinates, where
    singular values and norms are those of the continuous operator.
    """

    sys: HyperbolicSystem
    bc: LinearReflection
    profiles: ExponentProfiles
    s_max: int
    _blocks: dict = field(default_factory=dict, repr=False)
    _inverses: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self) -> PanelGrid:
        return self.profiles.grid

    @property
    def size(self) -> int:
        return self.sys.n * self.grid.size

    def margin(self, s: int) -> float:
        return mode_reflection(self.profiles, self.bc.r0, self.bc.r1, s).margin

    @property
    def coupling(self) -> np.ndarray:
        if "b1" not in self._blocks:
            n, N = self.sys.n, self.grid.size
            _, b = _coeff_nodes(self.sys, self.grid.nodes)
            B1 = np.zeros((n * N, n * N))
            for j in range(n):
                for k in range(n):
                    if j != k:
                        B1[j * N:(j + 1) * N, k * N:(k + 1) * N] = np.diag(b[j, k])
            self._blocks["b1"] = B1
        return self._blocks["b1"]

    def inverse_A(self, s: int) -> np.ndarray:
        """Matrix of ``A_s^{-1}``; raises :class:`ModeSingularError` if ``I - R_s`` is singular."""
        if s not in self._inverses:
            n, N = self.sys.n, self.grid.size
            eye = np.eye(n * N).reshape(n, N, n * N)
            sol = solve_mode_diagonal(self.profiles, self.bc.r0, self.bc.r1, s, eye, margin_tol=MARGIN_TOL)
            self._inverses[s] = sol.values.reshape(n * N, n * N)
        return self._inverses[s]

    def block(self, s: int) -> np.ndarray:
        if abs(s) > self.s_max:
            raise IndexError(f"mode {s} outside |s| <= {self.s_max}")
        if s not in self._blocks:
            self._blocks[s] = self.coupling @ self.inverse_A(s)
        return self._blocks[s]

    def _sqrt_w(self):
        return np.sqrt(np.tile(self.grid.weights, self.sys.n))

    def weighted(self, M: np.ndarray) -> np.ndarray:
        w = self._sqrt_w()
        return (w[:, None] * M) / w[None, :]

    def norm(self, s: int) -> float:
        return float(np.linalg.norm(self.weighted(self.block(s)), 2))


def build_discrete_D(sys: HyperbolicSystem, bc: LinearReflection, s_max: int = 64, grid: PanelGrid | None = None,
                     strict: bool = True) -> DiscreteOperator:
    bc.validate(sys)
    grid = grid or PanelGrid.build(breakpoints=sys.breakpoints())
    prof = exponent_profiles(sys, grid)
    if strict:
        im = iso_margins(prof, bc.r0, bc.r1, s_max)
        if im.min_margin <= MARGIN_TOL:
            raise MarginError(f"I - R_s is singular at s={im.worst_s} (margin {im.min_margin:.3g})")
    return DiscreteOperator(sys, bc, prof, s_max)


# ---------------------------------------------------------------------------


@dataclass
class ModeSpace:
    """Kernel or cokernel vectors at one mode, sampled on the grid (n, N)."""

    s: int
    vectors: list[np.ndarray]
    singular_values: np.ndarray
    gap_ratio: float
    verdict: str

    @property
    def nullity(self) -> int:
        return len(self.vectors)


def _orthonormal(vectors, weights):
    """L2-orthonormal basis (weighted coordinates) of the span of ``vectors``."""
    if not vectors:
        return np.zeros((weights.size, 0), dtype=complex)
    w = np.sqrt(weights)
    M = np.stack([v.ravel() * w for v in vectors], axis=1)
    q, _ = np.linalg.qr(M)
    return q


def _matching(sys, bc, s, grid, adjoint=False):
    Y, Y1 = fundamental_matrix(sys, s, grid.nodes, adjoint=adjoint)
    B0, B1 = boundary_matrices(sys.n, sys.m, bc.r0, bc.r1, adjoint=adjoint)
    return B0 + B1 @ Y1, Y, Y1, B1


def _mode_kernel(sys, bc, s, grid, adjoint=False, scale=1.0) -> ModeSpace:
    M, Y, _, _ = _matching(sys, bc, s, grid, adjoint)
    U, sv, Vh = np.linalg.svd(M * scale)
    nullity, gap, verdict = _gap_nullity(sv)
    vecs = []
    if nullity:
        a, _ = _coeff_nodes(sys, grid.nodes)
        for c in np.conj(Vh[-nullity:]):
            v = np.einsum("xij,j->ix", Y, c)
            vecs.append(v / a if adjoint else v)
    return ModeSpace(int(s), vecs, sv, gap, verdict)


def _transpose_cokernel(sys, bc, s, grid) -> list[np.ndarray]:
    """Cokernel of the primal mode problem from left null vectors ``eta`` of the
    matching matrix: ``g`` is in the range iff
    ``int eta^T B1 Y(1) Y(y)^{-1} a(y)^{-1} g(y) dy = 0``; returned conjugated so
    that it annihilates under ``int g . conj(q)``."""
    M, Y, Y1, B1 = _matching(sys, bc, s, grid)
    U, sv, Vh = np.linalg.svd(M)
    nullity, _, _ = _gap_nullity(sv)
    if not nullity:
        return []
    a, _ = _coeff_nodes(sys, grid.nodes)
    Yinv = np.linalg.inv(Y)
    out = []
    for eta in np.conj(U[:, -nullity:].T):  # eta^T M = 0
        row = eta @ B1 @ Y1  # (n,)
        q = np.einsum("j,xjk->kx", row, Yinv) / a
        out.append(np.conj(q))
    return out


def adjoint_solve(sys: HyperbolicSystem, bc: LinearReflection, s_max: int = 64, grid: PanelGrid | None = None,
                  check: bool = True):
    """Nontrivial solutions of the homogeneous adjoint problem, mode by mode.

    Returns ``(spaces, angles)``: the adjoint kernel per mode and, where
    nonempty and ``check`` is set, the largest principal angle against the
    cokernel derived from the primal matching matrix."""
    bc.validate(sys)
    grid = grid or PanelGrid.build(breakpoints=sys.breakpoints())
    spaces, angles = {}, {}
    w = np.tile(grid.weights, sys.n)
    for s in range(-s_max, s_max + 1):
        sp = _mode_kernel(sys, bc, s, grid, adjoint=True)
        spaces[s] = sp
        if check and sp.vectors:
            other = _transpose_cokernel(sys, bc, s, grid)
            if len(other) != sp.nullity:
                angles[s] = float(np.pi / 2)
            else:
                angles[s] = float(np.max(subspace_angles(_orthonormal(sp.vectors, w), _orthonormal(other, w))))
    return spaces, angles


@dataclass
class FredholmReport:
    kernel: dict
    cokernel: dict
    angles: dict
    nullity: int
    conullity: int
    verdict: str
    gamma: float
    min_gap_ratio: float

    @property
    def index(self) -> int:
        return self.nullity - self.conullity

    def kernel_functions(self):
        """Real-valued kernel elements as callables ``(x_nodes, t) -> (n, N, len(t))``."""
        return _real_functions(self.kernel)

    def cokernel_functions(self):
        return _real_functions(self.cokernel)

    def to_dict(self) -> dict:
        return {
            "nullity": self.nullity,
            "conullity": self.conullity,
            "index": self.index,
            "verdict": self.verdict,
            "gamma": self.gamma,
            "min_gap_ratio": self.min_gap_ratio,
            "kernel_modes": {str(s): sp.nullity for s, sp in self.kernel.items() if sp.nullity},
            "cokernel_modes": {str(s): sp.nullity for s, sp in self.cokernel.items() if sp.nullity},
            "max_angle": max(self.angles.values(), default=0.0),
        }


def _real_functions(spaces):
    out = []
    for s, sp in spaces.items():
        if s < 0:
            continue
        for v in sp.vectors:
            if s == 0:
                v0 = v * np.exp(-1j * np.angle(v.ravel()[np.argmax(np.abs(v))]))
                out.append(lambda t, v0=v0: np.real(v0)[..., None] * np.ones_like(np.atleast_1d(t)))
            else:
                out.append(lambda t, v=v, s=s: np.real(v[..., None] * np.exp(1j * s * np.atleast_1d(t))))
                out.append(lambda t, v=v, s=s: np.imag(v[..., None] * np.exp(1j * s * np.atleast_1d(t))))
    return out


def kernel_and_index(sys: HyperbolicSystem, bc: LinearReflection, s_max: int = 64, grid: PanelGrid | None = None,
                     gamma: float = 0.0) -> FredholmReport:
    """Kernel of ``A + B`` and of its adjoint over ``|s| <= s_max``.

    Nullities are decided per mode by the largest gap in the singular values
    of the boundary matching matrix; ``gamma`` rescales each mode by
    ``(1 + s^2)^{gamma/2}`` (the ``W^gamma`` weight), which must not change
    any verdict.  Dimensions count real functions (modes ``s`` and ``-s``
    together)."""
    bc.validate(sys)
    grid = grid or PanelGrid.build(breakpoints=sys.breakpoints())
    kern, cok, angles = {}, {}, {}
    w = np.tile(grid.weights, sys.n)
    verdict = "confident"
    gaps = []
    for s in range(-s_max, s_max + 1):
        scale = (1.0 + s * s) ** (gamma / 2)
        ks = _mode_kernel(sys, bc, s, grid, scale=scale)
        cs = _mode_kernel(sys, bc, s, grid, adjoint=True, scale=scale)
        kern[s], cok[s] = ks, cs
        for sp in (ks, cs):
            if sp.verdict != "confident":
                verdict = "indeterminate"
            if sp.nullity:
                gaps.append(sp.gap_ratio)
        if cs.vectors:
            other = _transpose_cokernel(sys, bc, s, grid)
            if len(other) != cs.nullity:
                angles[s] = float(np.pi / 2)
            else:
                angles[s] = float(np.max(subspace_angles(_orthonormal(cs.vectors, w), _orthonormal(other, w))))
    nullity = sum(sp.nullity for sp in kern.values())
    conullity = sum(sp.nullity for sp in cok.values())
    return FredholmReport(kern, cok, angles, nullity, conullity, verdict, gamma, min(gaps, default=np.inf))


# ---------------------------------------------------------------------------


@dataclass
class ModeReport:
    s: int
    method: str  # "parametrix" or "direct"
    obstruction: float  # mode-space norm of the projection onto the cokernel
    parametrix_defect: float
    d2_singular_values: np.ndarray | None
    oracle_deviation: float


@dataclass
class FredholmSolution:
    u: FourierField
    modes: list[ModeReport]
    obstruction: float  # L2 norm (1/2pi convention) of the cokernel component of f
    tol: float

    @property
    def solvable(self) -> bool:
        return self.obstruction <= self.tol

    @property
    def parametrix_defect(self) -> float:
        return max((m.parametrix_defect for m in self.modes), default=0.0)

    @property
    def oracle_deviation(self) -> float:
        return max((m.oracle_deviation for m in self.modes), default=0.0)

    def to_dict(self) -> dict:
        return {
            "solvable": self.solvable,
            "obstruction": self.obstruction,
            "parametrix_defect": self.parametrix_defect,
            "oracle_deviation": self.oracle_deviation,
            "direct_modes": [m.s for m in self.modes if m.method == "direct"],
        }


def _solve_with_cokernel(sys, bc, s, g, grid):
    """Direct mode solve plus the projection of ``g`` onto the mode cokernel."""
    sol = solve_mode_full(sys, bc, s, g, grid)
    obstruction = 0.0
    if sol.singular:
        cs = _mode_kernel(sys, bc, s, grid, adjoint=True)
        if cs.vectors:
            w = np.tile(grid.weights, sys.n)
            Q = _orthonormal(cs.vectors, w)
            coeff = Q.conj().T @ (g.ravel() * np.sqrt(w))
            obstruction = float(np.linalg.norm(coeff))
    return sol, obstruction


def fredholm_solve(sys: HyperbolicSystem, bc: LinearReflection, f: FourierField, grid: PanelGrid | None = None,
                   tol: float = 1e-8, oracle: bool = True, spectra: bool = False) -> FredholmSolution:
    """Solve ``(A + B) u = f`` mode by mode.

    On modes where ``A_s`` is invertible this solves ``(I + D_s) v = f_s`` and
    sets ``u_s = A_s^{-1} v``, checking the parametrix identity
    ``(I - D_s)(I + D_s) = I - D_s^2``.  Where ``A_s`` or ``I + D_s`` is
    singular it falls back to the direct boundary-value solve (least squares)
    and records the component of ``f_s`` along the mode cokernel.  ``f`` must
    live on ``grid``'s nodes.
    """
    bc.validate(sys)
    grid = grid or PanelGrid.build(breakpoints=sys.breakpoints())
    if f.x.size != grid.size or not np.allclose(f.x, grid.nodes):
        raise ValueError("f must be sampled on the panel grid nodes")
    op = build_discrete_D(sys, bc, f.s_max, grid, strict=False)
    n, N = sys.n, grid.size
    I = np.eye(n * N)
    out = np.zeros_like(f.modes, dtype=complex)
    reports = []
    total = 0.0
    for idx, s in enumerate(f.s):
        s = int(s)
        g = f.modes[idx].astype(complex)
        try:
            D = op.block(s)
        except ModeSingularError:
            D = None
        defect = 0.0
        sv = None
        if D is not None:
            P = I + D
            Dw = op.weighted(D)
            svals = np.linalg.svd(op.weighted(P), compute_uv=False)
            defect = float(np.max(np.abs((I - D) @ P - (I - D @ D)))) / (1.0 + np.max(np.abs(D)) ** 2)
            if spectra:
                sv = np.linalg.svd(Dw @ Dw, compute_uv=False)
            if svals[-1] > 1e-10 * svals[0]:
                v = np.linalg.solve(P, g.ravel())
                u = (op.inverse_A(s) @ v).reshape(n, N)
                dev = 0.0
                if oracle:
                    dev = float(np.max(np.abs(u - solve_mode_full(sys, bc, s, g, grid).values)))
                out[idx] = u
                reports.append(ModeReport(s, "parametrix", 0.0, defect, sv, dev))
                continue
        sol, obs = _solve_with_cokernel(sys, bc, s, g, grid)
        out[idx] = sol.values
        total += obs**2
        reports.append(ModeReport(s, "direct", obs, defect, sv, 0.0))
    # mode-space norms carry a factor 2 pi relative to the 1/2pi-weighted L2 norm
    return FredholmSolution(f.with_modes(out), reports, float(np.sqrt(total)) / PERIOD, tol)
