import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypsmooth import HyperbolicSystem, PeriodicStrip
from hypsmooth.boundary import LinearReflection
from hypsmooth.fourier import (
    FourierField,
    ModeSingularError,
    PanelGrid,
    exponent_profiles,
    from_modes,
    iso_margins,
    l2_pairing,
    mode_reflection,
    mode_residual,
    solve_mode_diagonal,
    solve_mode_full,
    to_modes,
    w_norm,
    w_tail_bound,
)
from hypsmooth.grid import GridFunction

from helpers import sys_c

P = PeriodicStrip()


def _pair(b=None):
    return HyperbolicSystem.build(2, 1, [1.0, -1.0], b, domain=P)


def _grid_field(fn, nx=9, nt=32):
    x, t = GridFunction.periodic_grid(nx, nt)
    return GridFunction.sample(fn, x, t, n=1, periodic=True)


def _band_limited(rng, n=2, nx=7, nt=32, s_max=5):
    x, t = GridFunction.periodic_grid(nx, nt)
    vals = np.zeros((n, nx, nt))
    for s in range(s_max + 1):
        c = rng.standard_normal((n, nx, 1)) + 1j * rng.standard_normal((n, nx, 1))
        vals += (c * np.exp(1j * s * t)).real
    return GridFunction(x, t, vals, periodic=True)


# -- panel grid ---------------------------------------------------------------


def test_panel_quadrature_is_exact_for_polynomials():
    g = PanelGrid.build(panels=3, order=6, breakpoints=(0.4,))
    assert g.panels == 4 and g.size == 24
    x = g.nodes
    assert g.integrate(x**5) == pytest.approx(1 / 6, abs=1e-15)
    assert np.allclose(g.cumulative @ x**4, x**5 / 5, atol=1e-14)
    assert np.allclose(g.derivative @ x**5, 5 * x**4, atol=1e-11)
    xq = np.linspace(0, 1, 13)
    assert np.allclose(g.interpolate(x**3, xq), xq**3, atol=1e-14)


# -- modes and norms ------------------------------------------------------------


def test_cosine_modes():
    F = to_modes(_grid_field(lambda k, x, t: np.cos(t) + 0 * x), 4)
    assert np.allclose(F.mode(1), np.pi) and np.allclose(F.mode(-1), np.pi)
    rest = [s for s in F.s if abs(s) != 1]
    assert max(np.max(np.abs(F.mode(s))) for s in rest) < 1e-13


def test_constant_modes():
    F = to_modes(_grid_field(lambda k, x, t: 1.0 + 0 * x * t), 3)
    assert np.allclose(F.mode(0), 2 * np.pi)
    assert np.max(np.abs(F.modes[F.s != 0])) < 1e-13


def test_shifted_time_origin():
    x = np.linspace(0, 1, 3)
    t = 0.3 + np.arange(16) * 2 * np.pi / 16
    u = GridFunction(x, t, np.cos(t)[None, None, :] * np.ones((1, 3, 1)), periodic=True)
    assert np.allclose(to_modes(u, 3).mode(1), np.pi)


@given(st.integers(0, 2**32 - 1))
def test_round_trip_band_limited(seed):
    u = _band_limited(np.random.default_rng(seed))
    F = to_modes(u, 5)
    assert F.realness_defect() < 1e-12
    back = from_modes(F, u.t.size)
    assert np.max(np.abs(back.values - u.values)) <= 1e-12


def test_aliasing_is_refused():
    u = _band_limited(np.random.default_rng(0), nt=16)
    with pytest.raises(ValueError):
        to_modes(u, 8)
    with pytest.raises(ValueError):
        from_modes(to_modes(u, 5), 10)


@pytest.mark.parametrize("gamma", [0, 1, 2, 3])
def test_cosine_norm(gamma):
    F = to_modes(_grid_field(lambda k, x, t: np.cos(t) + 0 * x), 4)
    assert w_norm(F, gamma) ** 2 == pytest.approx(2 ** (gamma + 1) * np.pi**2, rel=1e-12)


def test_zero_norm_and_bad_gamma():
    F = to_modes(_grid_field(lambda k, x, t: 0 * x * t), 3)
    assert w_norm(F, 2) == 0.0
    with pytest.raises(ValueError):
        w_norm(F, -1)


@given(st.integers(0, 2**32 - 1))
def test_parseval_against_grid_quadrature(seed):
    u = _band_limited(np.random.default_rng(seed))
    F = to_modes(u, 15)
    w = F.xweights
    grid_l2 = np.sum(u.values**2 * w[None, :, None]) * (2 * np.pi / u.t.size)
    assert w_norm(F, 0) ** 2 == pytest.approx(2 * np.pi * grid_l2, rel=1e-8)
    # the pairing carries the 1/2pi factor: <u, u> = (1/2pi) int int u^2
    assert l2_pairing(F, F).real == pytest.approx(grid_l2 / (2 * np.pi), rel=1e-8)


def test_tail_bound():
    assert w_tail_bound(64, 1.0, 1.0, 1.0) == np.inf
    b = w_tail_bound(64, 0.0, 1.0, 2.0)
    # 2 sum_{s > 64} s^-4 <= 2 * 64^-3 / 3
    exact = 2 * sum(s**-4.0 for s in range(65, 200000))
    assert exact <= b <= 2 * exact


def test_enforce_real():
    rng = np.random.default_rng(3)
    modes = rng.standard_normal((5, 1, 4)) + 1j * rng.standard_normal((5, 1, 4))
    F = FourierField(modes, np.linspace(0, 1, 4), np.full(4, 0.25))
    assert F.realness_defect() > 0.1
    assert F.enforce_real().realness_defect() < 1e-15


# -- exponent profiles and reflections ----------------------------------------


def test_exponent_profiles_constant():
    prof = exponent_profiles(HyperbolicSystem.build(1, 1, [2.0], [[1.0]], domain=P))
    x = prof.grid.nodes
    assert np.allclose(prof.alpha[0], x / 2) and np.allclose(prof.beta[0], x / 2)
    prof = exponent_profiles(_pair())
    assert np.allclose(prof.alpha, [prof.grid.nodes, -prof.grid.nodes]) and np.all(prof.beta == 0)


def test_exponent_profiles_piecewise_speed():
    sys = HyperbolicSystem.build(1, 1, ["piecewise(x < 0.5, 1, 2)"], domain=P)
    prof = exponent_profiles(sys)
    assert prof.alpha1[0] == pytest.approx(0.75, abs=1e-14)
    a, _ = prof.at(np.array([0.25, 0.75]))
    assert np.allclose(a[0], [0.25, 0.5 + 0.125], atol=1e-14)


def test_exponent_profiles_refuse_degenerate_speed():
    with pytest.raises(ValueError):
        exponent_profiles(HyperbolicSystem.build(1, 1, ["x - 0.5"], domain=P))
    with pytest.raises(ValueError):
        exponent_profiles(HyperbolicSystem.build(1, 1, ["1 + t"], domain=P))


def test_quarter_reflection_closed_form():
    prof = exponent_profiles(_pair())
    for s in range(-100, 101):
        R = mode_reflection(prof, [[0.5]], [[0.5]], s)
        assert abs(R.R[0, 0] - 0.25 * np.exp(-2j * s)) < 1e-13
    assert mode_reflection(prof, [[0.5]], [[0.5]], 0).margin == pytest.approx(0.75)
    assert mode_reflection(prof, [[0.0]], [[0.5]], 3).margin == 1.0
    assert mode_reflection(prof, [[1.0]], [[1.0]], 0).margin < 1e-15


@given(st.integers(-200, 200), st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_reflection_moduli_do_not_depend_on_s(s, r):
    sys = HyperbolicSystem.build(3, 1, [1.0, -2.0, "-1-x"], [[0.3, 0, 0], [0, -0.2, 0], [0, 0, 0.1]], domain=P)
    prof = exponent_profiles(sys)
    r0, r1 = np.array(r[:2]).reshape(1, 2), np.array(r[2:4]).reshape(2, 1)
    # entry-wise moduli of the rank-one product r1 r0 scaled by s-independent factors
    a = np.abs(mode_reflection(prof, r0, r1, s).R)
    b = np.abs(mode_reflection(prof, r0, r1, 0).R)
    assert np.allclose(a, b, atol=1e-13)


def test_iso_margins_fixtures():
    prof = exponent_profiles(_pair())
    q = iso_margins(prof, [[0.5]], [[0.5]], s_max=64)
    assert q.min_margin == pytest.approx(0.75) and q.torus_bound == pytest.approx(0.75)
    assert q.ge == 1.0 and q.le == 1.0 and q.passed
    bad = iso_margins(prof, [[1.0]], [[1.0]], s_max=8)
    assert bad.min_margin < 1e-14 and not bad.passed
    free = iso_margins(prof, [[0.0]], [[0.0]], s_max=8)
    assert free.min_margin == 1.0 and free.torus_bound == 1.0


def test_torus_bound_sees_unsampled_phases():
    # alpha(1) differences 1 + 1/pi: sampled s never hit the worst phase exactly
    sys = HyperbolicSystem.build(2, 1, [1.0, -np.pi / (1 + np.pi)], domain=P)
    prof = exponent_profiles(sys)
    q = iso_margins(prof, [[0.9]], [[0.9]], s_max=8)
    assert q.torus_bound == pytest.approx(1 - 0.81, abs=1e-9)
    assert q.torus_bound <= q.min_margin


# -- mode solvers ---------------------------------------------------------------


def test_zero_forcing_gives_zero():
    prof = exponent_profiles(_pair())
    g = np.zeros((2, prof.grid.size))
    assert np.all(solve_mode_diagonal(prof, [[0.5]], [[0.5]], 3, g).values == 0)
    sol = solve_mode_full(_pair(), LinearReflection([[0.5]], [[0.5]]), 3, g, prof.grid)
    assert np.max(np.abs(sol.values)) == 0.0


def test_scalar_closed_form():
    sys = HyperbolicSystem.build(1, 1, [1.0], domain=P)
    prof = exponent_profiles(sys)
    x = prof.grid.nodes
    sol = solve_mode_diagonal(prof, np.zeros((1, 0)), np.zeros((0, 1)), 1, np.ones((1, x.size)))
    assert np.max(np.abs(sol.values[0] - (1 - np.exp(-1j * x)) / 1j)) < 1e-10


@given(st.integers(-64, 64), st.integers(0, 2**32 - 1))
def test_diagonal_matches_full_oracle(s, seed):
    sys = _pair([[0.4, 0], [0, -0.3]])
    bc = LinearReflection([[0.5]], [[0.5]])
    prof = exponent_profiles(sys)
    x = prof.grid.nodes
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    g = c[:, :1] + c[:, 1:2] * np.cos(2 * x) + c[:, 2:] * x**2
    d = solve_mode_diagonal(prof, bc.r0, bc.r1, s, g)
    f = solve_mode_full(sys, bc, s, g, prof.grid)
    assert np.max(np.abs(d.values - f.values)) <= 1e-10 * (1 + np.max(np.abs(f.values)))
    assert mode_residual(sys, bc, prof.grid, d, g)[1] < 1e-12


@pytest.mark.parametrize("s", [-16, -3, 0, 1, 8, 16])
def test_diagonal_mode_residual(s):
    # the residual differentiates the panel interpolant, so it needs nodes per wavelength
    sys = _pair([[0.4, 0], [0, -0.3]])
    bc = LinearReflection([[0.5]], [[0.5]])
    prof = exponent_profiles(sys, PanelGrid.build(8, 16))
    x = prof.grid.nodes
    g = np.stack([1 + np.cos(2 * x) + x**2, 1j * x + 1])
    ode, bres = mode_residual(sys, bc, prof.grid, solve_mode_diagonal(prof, bc.r0, bc.r1, s, g), g)
    assert ode <= 1e-10 and bres <= 1e-14


def test_singular_mode_raises_with_margin():
    prof = exponent_profiles(_pair())
    with pytest.raises(ModeSingularError) as info:
        solve_mode_diagonal(prof, [[1.0]], [[1.0]], 0, np.ones((2, prof.grid.size)))
    assert info.value.s == 0 and info.value.margin < 1e-12


def test_full_solver_flags_singular_matching():
    sys = _pair()
    grid = PanelGrid.build()
    sol = solve_mode_full(sys, LinearReflection([[1.0]], [[1.0]]), 0, np.zeros((2, grid.size)), grid)
    assert sol.singular


def test_coupled_full_solver_self_certifies():
    sys = sys_c(P)
    bc = LinearReflection([[0.5]], [[0.5]])
    grid = PanelGrid.build()
    g = np.ones((2, grid.size))
    sol = solve_mode_full(sys, bc, 0, g, grid)
    ode, bres = mode_residual(sys, bc, grid, sol, g)
    assert ode <= 1e-10 and bres <= 1e-10


def test_operator_is_block_diagonal_over_modes():
    # (d_t + a d_x + b) applied to Re(e^{ist} v(x)) has only the modes +-s
    grid = PanelGrid.build()
    x = grid.nodes
    s, nt = 3, 16
    v = np.stack([np.exp(x) + 1j * x, np.cos(2 * x) - 1j])
    t = np.arange(nt) * 2 * np.pi / nt
    phase = np.exp(1j * s * t)
    dv = v @ grid.derivative.T
    Lv = np.stack([dv[0], -dv[1]]) + 1j * s * v + v[::-1]  # a = diag(1, -1), b = [[0, 1], [1, 0]]
    field = (Lv[:, :, None] * phase).real
    F = to_modes(GridFunction(x, t, field, periodic=True), 7, grid.weights)
    assert np.max(np.abs(F.mode(s) - np.pi * Lv)) < 1e-12
    others = [k for k in F.s if abs(k) != s]
    assert max(np.max(np.abs(F.mode(k))) for k in others) < 1e-12
