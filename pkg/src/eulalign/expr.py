"""Closed-form profile expressions.

A small arithmetic grammar over the coordinates ``x1 .. xn``::

    + - * / ** ^   sin cos exp tanh sqrt min max   pi e   numeric literals

Expressions are parsed with :mod:`ast` against a whitelist and converted
to sympy, which supplies exact gradients and Hessians; numerical callables
come from :func:`sympy.lambdify`.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field

import numpy as np
import sympy as sp


class ExpressionError(ValueError):
    pass


_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "tanh": sp.tanh, "sqrt": sp.sqrt,
          "min": sp.Min, "max": sp.Max}
_CONSTS = {"pi": sp.pi, "e": sp.E}
_BINOPS = {ast.Add: lambda a, b: a + b, ast.Sub: lambda a, b: a - b,
           ast.Mult: lambda a, b: a * b, ast.Div: lambda a, b: a / b,
           ast.Pow: lambda a, b: a ** b, ast.BitXor: lambda a, b: a ** b}


def _convert(node, symbols: dict):
    if isinstance(node, ast.Expression):
        return _convert(node.body, symbols)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return sp.nsimplify(node.value) if isinstance(node.value, int) else sp.Float(node.value)
    if isinstance(node, ast.Name):
        if node.id in symbols:
            return symbols[node.id]
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        raise ExpressionError(f"unknown name {node.id!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        val = _convert(node.operand, symbols)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_convert(node.left, symbols), _convert(node.right, symbols))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if node.keywords:
            raise ExpressionError("keyword arguments are not allowed")
        args = [_convert(a, symbols) for a in node.args]
        name = node.func.id
        if name in ("min", "max"):
            if len(args) < 2:
                raise ExpressionError(f"{name} needs at least two arguments")
        elif len(args) != 1:
            raise ExpressionError(f"{name} takes one argument")
        return _FUNCS[name](*args)
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


@dataclass
class Profile:
    """Scalar field on R^n with exact derivatives.

    Call with points of shape ``(..., n)``; :meth:`grad` returns ``(..., n)``
    and :meth:`hess` returns ``(..., n, n)``.
    """

    text: str
    dim: int
    expr: sp.Expr = field(repr=False)
    _f: object = field(default=None, repr=False)
    _g: object = field(default=None, repr=False)
    _h: object = field(default=None, repr=False)

    def __post_init__(self):
        xs = symbols(self.dim)
        self._f = sp.lambdify(xs, self.expr, "numpy")
        self._g = [sp.lambdify(xs, sp.diff(self.expr, x), "numpy") for x in xs]
        self._h = [[sp.lambdify(xs, sp.diff(self.expr, a, b), "numpy") for b in xs] for a in xs]

    @property
    def is_zero(self) -> bool:
        return self.expr == 0

    def _apply(self, fn, pts):
        pts = np.asarray(pts, dtype=float)
        if pts.shape[-1] != self.dim:
            raise ExpressionError(f"expected points with {self.dim} coordinates")
        out = fn(*np.moveaxis(pts, -1, 0))
        return np.broadcast_to(np.asarray(out, dtype=float), pts.shape[:-1]).copy()

    def __call__(self, pts) -> np.ndarray:
        return self._apply(self._f, pts)

    def grad(self, pts) -> np.ndarray:
        return np.stack([self._apply(g, pts) for g in self._g], axis=-1)

    def hess(self, pts) -> np.ndarray:
        return np.stack([np.stack([self._apply(h, pts) for h in row], axis=-1) for row in self._h], axis=-2)


def symbols(dim: int):
    return sp.symbols(" ".join(f"x{k + 1}" for k in range(dim)), real=True, seq=True)


def parse(text, dim: int) -> Profile:
    """Parse an expression (or a bare number) into a :class:`Profile`."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(float(text))
    if not isinstance(text, str):
        raise ExpressionError("expression must be a string or a number")
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    syms = {str(s): s for s in symbols(dim)}
    return Profile(text, dim, sp.sympify(_convert(tree, syms)))
