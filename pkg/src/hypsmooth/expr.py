"""Closed-form coefficient fields and the scenario expression grammar.

Grammar accepted by :func:`parse_expression`::

    expr  := numbers, variables, + - * / ^ (or **), unary minus,
             sin(e) cos(e) exp(e) abs(e), piecewise(cond, e1, e2)
    cond  := e < e | e <= e | e > e | e >= e   (chains allowed)

Variables default to ``x`` and ``t``; ``pi`` and ``e`` are constants.  Other
variable names (``z``, ``z1``, ...) can be enabled per call.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import sympy as sp

__all__ = ["ExpressionError", "CoefficientField", "parse_expression", "compile_expression"]

X, T = sp.symbols("x t", real=True)

_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "abs": sp.Abs}
_CONSTS = {"pi": sp.pi, "e": sp.E}
_CMP = {ast.Lt: sp.Lt, ast.LtE: sp.Le, ast.Gt: sp.Gt, ast.GtE: sp.Ge}
_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}

# Central-difference step for d/dt of opaque callables.
DT_STEP = 1e-5


class ExpressionError(ValueError):
    """Raised for text outside the grammar."""


def _symbols_for(names: Sequence[str]) -> dict[str, sp.Symbol]:
    out = {}
    for nm in names:
        if nm == "x":
            out[nm] = X
        elif nm == "t":
            out[nm] = T
        else:
            out[nm] = sp.Symbol(nm, real=True)
    return out


class _Builder:
    def __init__(self, symbols: dict[str, sp.Symbol]):
        self.symbols = symbols
        self.breakpoints: list[float] = []

    def build(self, node):
        if isinstance(node, ast.Expression):
            return self.build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return sp.nsimplify(node.value) if isinstance(node.value, int) else sp.Float(node.value)
        if isinstance(node, ast.Name):
            if node.id in self.symbols:
                return self.symbols[node.id]
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            raise ExpressionError(f"unknown variable {node.id!r}")
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = self.build(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](self.build(node.left), self.build(node.right))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            name = node.func.id
            if name in _FUNCS:
                if len(node.args) != 1:
                    raise ExpressionError(f"{name} takes one argument")
                return _FUNCS[name](self.build(node.args[0]))
            if name == "piecewise":
                if len(node.args) != 3:
                    raise ExpressionError("piecewise(cond, a, b) takes three arguments")
                cond = self.condition(node.args[0])
                return sp.Piecewise((self.build(node.args[1]), cond), (self.build(node.args[2]), True))
            raise ExpressionError(f"unknown function {name!r}")
        raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")

    def condition(self, node):
        if not isinstance(node, ast.Compare):
            raise ExpressionError("piecewise condition must be a comparison")
        terms = [self.build(node.left)] + [self.build(c) for c in node.comparators]
        rels = []
        for op, lhs, rhs in zip(node.ops, terms[:-1], terms[1:]):
            if type(op) not in _CMP:
                raise ExpressionError("only < <= > >= comparisons are allowed")
            rels.append(_CMP[type(op)](lhs, rhs))
            self._record_breakpoint(lhs, rhs)
        return sp.And(*rels) if len(rels) > 1 else rels[0]

    def _record_breakpoint(self, lhs, rhs):
        # x compared against a constant marks a jump location in x
        diff = sp.expand(lhs - rhs)
        if diff.free_symbols == {X} and sp.degree(diff, X) == 1:
            root = float(sp.solve(diff, X)[0])
            if 0.0 < root < 1.0:
                self.breakpoints.append(root)


def parse_expression(text: str | float | int, variables: Sequence[str] = ("x", "t")):
    """Parse grammar text into a sympy expression plus detected x-breakpoints."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return sp.Float(text) if isinstance(text, float) else sp.Integer(text), []
    if not isinstance(text, str):
        raise ExpressionError(f"expected expression string, got {type(text).__name__}")
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    b = _Builder(_symbols_for(variables))
    return b.build(tree), sorted(set(b.breakpoints))


def _broadcast_lambdify(args, expr) -> Callable:
    fn = sp.lambdify(args, expr, modules="numpy")

    def call(*vals):
        vals = [np.asarray(v, dtype=float) for v in vals]
        shape = np.broadcast_shapes(*(v.shape for v in vals)) if vals else ()
        out = np.asarray(fn(*vals), dtype=float)
        return np.broadcast_to(out, shape).copy() if out.shape != shape else out

    return call


def compile_expression(text: str | float, variables: Sequence[str]) -> Callable:
    """Compile grammar text into a numpy-vectorized function of ``variables``."""
    expr, _ = parse_expression(text, variables)
    syms = list(_symbols_for(variables).values())
    return _broadcast_lambdify(syms, expr)


@dataclass(frozen=True)
class CoefficientField:
    """Scalar coefficient evaluable at arbitrary ``(x, t)``.

    Built either from grammar text (symbolic, so ``dt`` is exact) or from a
    vectorized Python callable (``dt`` by central differences).
    """

    func: Callable = field(repr=False)
    time_independent: bool = False
    breakpoints: tuple[float, ...] = ()
    source: str = ""
    _dt: Callable | None = field(default=None, repr=False)
    _const: float | None = None

    @classmethod
    def parse(cls, text: str | float, breakpoints: Sequence[float] = ()) -> "CoefficientField":
        expr, found = parse_expression(text)
        bps = tuple(sorted(set(float(b) for b in breakpoints) | set(found)))
        for bp in bps:
            if not 0.0 <= bp <= 1.0:
                raise ExpressionError(f"breakpoint {bp} outside [0, 1]")
        ti = T not in expr.free_symbols
        fn = _broadcast_lambdify((X, T), expr)
        dexpr = sp.diff(expr, T)
        dfn = _broadcast_lambdify((X, T), dexpr)
        const = float(expr) if not expr.free_symbols else None
        return cls(fn, ti, bps, str(text), dfn, const)

    @classmethod
    def constant(cls, value: float) -> "CoefficientField":
        v = float(value)
        return cls(lambda x, t: np.full(np.broadcast_shapes(np.shape(x), np.shape(t)), v),
                   True, (), repr(v), lambda x, t: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(t))), v)

    @classmethod
    def from_callable(cls, fn: Callable, time_independent: bool = False,
                      breakpoints: Sequence[float] = (), dt: Callable | None = None) -> "CoefficientField":
        def call(x, t):
            x = np.asarray(x, dtype=float)
            t = np.asarray(t, dtype=float)
            shape = np.broadcast_shapes(x.shape, t.shape)
            return np.broadcast_to(np.asarray(fn(x, t), dtype=float), shape).copy()

        return cls(call, time_independent, tuple(sorted(breakpoints)), getattr(fn, "__name__", "callable"), dt)

    @classmethod
    def coerce(cls, value) -> "CoefficientField":
        if isinstance(value, CoefficientField):
            return value
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return cls.constant(value)
        if isinstance(value, str):
            return cls.parse(value)
        if callable(value):
            return cls.from_callable(value)
        raise TypeError(f"cannot build a coefficient from {value!r}")

    def __call__(self, x, t=0.0) -> np.ndarray:
        return self.func(x, t)

    def dt(self, x, t) -> np.ndarray:
        """Time derivative; exact for parsed fields, central differences otherwise."""
        if self.time_independent:
            return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(t)))
        if self._dt is not None:
            return self._dt(x, t)
        t = np.asarray(t, dtype=float)
        return (self.func(x, t + DT_STEP) - self.func(x, t - DT_STEP)) / (2 * DT_STEP)

    @property
    def is_zero(self) -> bool:
        return self._const == 0.0

    @property
    def constant_value(self) -> float | None:
        return self._const
