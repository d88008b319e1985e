import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hypsmooth import FullStrip, HalfStrip, HyperbolicSystem
from hypsmooth.boundary import (
    ClassicalTrace,
    DissipativeNonlinear,
    IntegralAge,
    LinearReflection,
    PopulationModel,
    jacobian,
)
from hypsmooth.grid import GridFunction
from hypsmooth.solver import contraction_check


def _field(k, x, t):
    return (k + 1) * np.cos(t) + x


def test_classical_trace_broadcasts():
    bc = ClassicalTrace((np.sin, lambda t: 2.0))
    tau = np.linspace(0, 1, 5)
    assert np.allclose(bc.evaluate(None, 0, tau), np.sin(tau))
    assert np.allclose(bc.evaluate(None, 1, tau), 2.0)
    with pytest.raises(ValueError):
        bc.validate(HyperbolicSystem.build(3, 1, [1, -1, -2]))


def test_reflection_reads_opposite_family():
    bc = LinearReflection([[0.5, 0.0]], [[2.0], [-1.0]])
    tau = np.array([0.0, 1.0])
    # u_0(0) = 0.5 u_1(0); u_2(1) = -u_0(1)
    assert np.allclose(bc.evaluate(_field, 0, tau), 0.5 * 2 * np.cos(tau))
    assert np.allclose(bc.evaluate(_field, 2, tau), -(np.cos(tau) + 1))
    assert np.allclose(bc.evaluate(_field, 1, tau), 2 * (np.cos(tau) + 1))
    with pytest.raises(ValueError):
        bc.validate(HyperbolicSystem.build(3, 2, [1, 1, -1]))


def test_integral_age_moment():
    gamma = lambda x: np.ones_like(x)  # noqa: E731
    law = IntegralAge(lambda z: 2 * z, gamma)
    exact = 1 - np.exp(-1)
    u = lambda k, x, t: np.exp(-x) + 0 * t  # noqa: E731
    assert abs(law.moment(u, np.array([0.3]))[0] - exact) < 1e-14
    x = np.linspace(0, 1, 101)
    t = np.linspace(0, 1, 3)
    g = GridFunction(x, t, np.exp(-x)[None, :, None] * np.ones((1, 1, 3)))
    got = law.moment(g, np.array([0.5]))[0]
    assert abs(got - exact) < 1e-5  # trapezoid, h^2/12 * max|u''|
    assert abs(law.evaluate(g, 0, np.array([0.5]))[0] - 2 * got) < 1e-15
    with pytest.raises(ValueError):
        law.validate(HyperbolicSystem.build(2, 1, [1, -1]))


def test_dissipative_outgoing_values():
    bc = DissipativeNonlinear(lambda z: np.stack([z[1], z[0] ** 2]), 1)
    x = np.linspace(0, 1, 3)
    t = np.linspace(0, 1, 3)
    vals = np.stack([np.add.outer(x, t), np.add.outer(10 * x, t)])
    u = GridFunction(x, t, vals)
    tau = np.array([0.0, 0.5])
    z = bc.outgoing(u, tau)
    assert np.allclose(z[0], 1 + tau) and np.allclose(z[1], tau)
    assert np.allclose(bc.evaluate(u, 1, tau), (1 + tau) ** 2)


@given(arrays(float, (3, 3), elements=st.floats(-5, 5)))
def test_jacobian_of_linear_map(M):
    z = np.random.default_rng(0).standard_normal((3, 4))
    J = jacobian(lambda v: M @ v, z)
    assert np.allclose(J, M[:, :, None], atol=1e-8 * (1 + np.abs(M).max()))


def test_jacobian_rejects_nonfinite():
    with pytest.raises(FloatingPointError), np.errstate(all="ignore"):
        jacobian(lambda z: 1 / (z - z), np.ones((1, 2)))


@pytest.mark.parametrize("bjj, passed", [(1.0, True), (0.0, True), (-1.0, False)])
def test_contraction_weight_sign(bjj, passed):
    # weight sup_x exp(int_x^0 b_jj) = 1 for b_jj >= 0 and e for b_jj = -1
    sys = HyperbolicSystem.build(1, 1, [1.0], [[bjj]], domain=HalfStrip(0.0))
    bc = DissipativeNonlinear(lambda z: 0.5 * np.tanh(z), 1)
    rep = contraction_check(sys, bc)
    weight = np.exp(1.0) if bjj < 0 else 1.0
    assert rep.weights[0, 0] == pytest.approx(weight, rel=1e-8)
    assert rep.min_margin == pytest.approx(1 - 0.5 * weight, rel=1e-6)
    assert rep.passed is passed


def test_contraction_hessian_reading():
    sys = HyperbolicSystem.build(2, 1, [1.0, -1.0], domain=FullStrip())
    bc = DissipativeNonlinear(lambda z: np.stack([0.2 * z[1] ** 2, 0.1 * z[0] * z[1]]), 1)
    rep = contraction_check(sys, bc, reading="hessian")
    assert np.allclose(rep.row_sums, [0.4, 0.2], atol=1e-5)
    jac = contraction_check(sys, bc, z_box=[(-1, 1), (-1, 1)])
    assert np.allclose(jac.row_sums, [0.4, 0.2], atol=1e-6)
    with pytest.raises(ValueError):
        contraction_check(sys, bc, reading="other")


def test_population_model_pieces():
    pop = PopulationModel(0.5, lambda x: np.ones_like(x), lambda z: z)
    sys = pop.system(HalfStrip(0.0))
    assert sys.n == 1 and sys.m == 1
    assert float(sys.b[0][0](0.3, 0.1)) == 0.5
    assert isinstance(pop.boundary(), IntegralAge)
