"""Characteristic-integral solvers and smoothing diagnostics for 1D hyperbolic systems."""

from .expr import CoefficientField, ExpressionError
from .system import (
    FullStrip,
    HalfStrip,
    HyperbolicSystem,
    PeriodicStrip,
    TimeDomain,
    check_bv_factorization,
    check_hyperbolicity,
    check_levy,
)
from .grid import GridFunction

__version__ = "0.1.0"

__all__ = [
    "CoefficientField",
    "ExpressionError",
    "FullStrip",
    "HalfStrip",
    "HyperbolicSystem",
    "PeriodicStrip",
    "TimeDomain",
    "GridFunction",
    "check_bv_factorization",
    "check_hyperbolicity",
    "check_levy",
]
