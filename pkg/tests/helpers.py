"""Shared fixture systems for the test modules."""

import numpy as np
from numpy.polynomial import Polynomial

from hypsmooth import HalfStrip, HyperbolicSystem
from hypsmooth.fourier import FourierField


def transport(speed=1.0, T=0.0):
    return HyperbolicSystem.build(1, 1, [speed], domain=HalfStrip(T))


def sys_c(domain=None, manufactured=False):
    """Coupled pair a = diag(1, -1), b12 = b21 = 1.

    With ``manufactured`` the forcing makes ``u = (sin(t+x), cos(t-2x))`` exact.
    """
    f = None
    if manufactured:
        f = ["cos(t+x)+cos(t+x)+cos(t-2*x)", "-sin(t-2*x) - 2*sin(t-2*x) + sin(t+x)"]
    return HyperbolicSystem.build(2, 1, [1.0, -1.0], [[0, 1], [1, 0]], f, domain or HalfStrip(0.0))


def sys_c_exact(j, x, t):
    return np.sin(t + x) if j == 0 else np.cos(t - 2 * x)


def manufactured_modes(grid, b, rho, s_max, rng):
    """Modes of a band-limited u* with u_0(0) = rho u_1(0), u_1(1) = rho u_0(1)
    for a = diag(1, -1) and constant b, and of f = (A + B) u*, on grid nodes.

    Each mode is a cubic polynomial corrected by a constant and a linear term
    so that the two reflection conditions hold.
    """
    x = grid.nodes
    U = np.zeros((2 * s_max + 1, 2, x.size), dtype=complex)
    F = np.zeros_like(U)
    for idx, s in enumerate(range(-s_max, s_max + 1)):
        if s < 0:
            continue
        c = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
        if s == 0:
            c = c.real + 0j
        p, q = Polynomial(c[0]), Polynomial(c[1])
        alpha = rho * q(0) - p(0)
        beta = rho * (p(1) + alpha) - q(1)
        p, q = p + alpha, q + Polynomial([0, beta])
        u = np.stack([p(x), q(x)])
        du = np.stack([p.deriv()(x), -q.deriv()(x)])
        U[idx] = u
        F[idx] = du + 1j * s * u + np.einsum("jk,kx->jx", np.asarray(b, dtype=float), u)
        U[-1 - idx], F[-1 - idx] = np.conj(U[idx]), np.conj(F[idx])
    return FourierField(U, x, grid.weights), FourierField(F, x, grid.weights)
