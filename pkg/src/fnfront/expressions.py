"""Tiny arithmetic expression language for config-supplied data.

Grammar: numbers, variables, ``+ - * / ^`` (``^`` is power), unary minus,
parentheses and calls to ``exp``, ``sin``, ``cos``, ``sqrt``, ``abs``,
``min``, ``max``.  Evaluation is vectorised over numpy arrays; ``min``/``max``
are elementwise.
"""
from __future__ import annotations

import ast

import numpy as np


class ExpressionError(ValueError):
    pass


_FUNCS = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "min": lambda *a: _reduce(np.minimum, a),
    "max": lambda *a: _reduce(np.maximum, a),
}
_CONSTS = {"pi": np.pi}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


def _reduce(fn, args):
    if len(args) < 2:
        raise ExpressionError("min/max need at least two arguments")
    out = args[0]
    for a in args[1:]:
        out = fn(out, a)
    return out


class Expression:
    """A compiled expression in a fixed set of variables."""

    def __init__(self, source, variables=("x", "y", "t")):
        if isinstance(source, (int, float)):
            source = repr(float(source))
        if not isinstance(source, str) or not source.strip():
            raise ExpressionError(f"expression must be a non-empty string, got {source!r}")
        self.source = source
        self.variables = tuple(variables)
        try:
            tree = ast.parse(source.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body
        self.free = sorted(
            {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)} - set(_FUNCS) - set(_CONSTS)
        )

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(f"bad literal {node.value!r} in {self.source!r}")
        elif isinstance(node, ast.Name):
            if node.id not in self.variables and node.id not in _CONSTS:
                raise ExpressionError(f"unknown name {node.id!r} in {self.source!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"operator not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"operator not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise ExpressionError(f"call not allowed in {self.source!r}")
            for a in node.args:
                self._check(a)
        else:
            raise ExpressionError(f"construct {type(node).__name__} not allowed in {self.source!r}")

    def __call__(self, **env):
        missing = [v for v in self.free if v not in env]
        if missing:
            raise ExpressionError(f"{self.source!r} needs variables {missing}")
        shape = np.broadcast(*[np.asarray(v) for v in env.values()]).shape if env else ()
        out = self._eval(self._tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy() if shape else float(out)

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            return np.asarray(env[node.id], dtype=float)
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        return _FUNCS[node.func.id](*[self._eval(a, env) for a in node.args])

    def __repr__(self):
        return f"Expression({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and (self.source, self.variables) == (
            other.source,
            other.variables,
        )

    def __hash__(self):
        return hash((self.source, self.variables))
