"""Builder expressions for Fock operators.

Expressions use a restricted subset of Python expression syntax::

    expr     := expr ('+' | '-') expr | expr '*' expr | '-' expr | '(' expr ')'
              | number | call | 'I' | 'N'
    call     := 'cdag(' site [',' flavor] ')' | 'c(' site [',' flavor] ')'
              | 'n(' site ')' | 'hc(' expr ')'
    number   := int | float | complex literal (e.g. 0.5, 2, 1j)

``site`` is an integer site index into the lattice's site list, ``I`` the
identity and ``N`` the total number operator. ``hc(x)`` is the adjoint of
``x``, so a hopping term reads ``-(cdag(0)*c(1) + hc(cdag(0)*c(1)))``.
"""

from __future__ import annotations

import ast

import numpy as np

from .caralg import FockSpace


class ExpressionError(ValueError):
    pass


_CALLS = {"cdag", "c", "n", "hc"}


def parse_operator(expr: str, space: FockSpace) -> np.ndarray:
    """Evaluate a builder expression to a dense matrix on ``space``."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {expr!r}: {exc.msg}") from None
    value = _eval(tree.body, space, expr)
    if np.isscalar(value):
        return value * space.identity_matrix
    return value


def _int_arg(node, expr):
    if isinstance(node, ast.Constant) and isinstance(node.value, int) and not isinstance(node.value, bool):
        return node.value
    raise ExpressionError(f"{expr!r}: site and flavor arguments must be integer literals")


def _eval(node, space, expr):
    if isinstance(node, ast.Constant):
        if isinstance(node.value, (int, float, complex)) and not isinstance(node.value, bool):
            return node.value
        raise ExpressionError(f"{expr!r}: unsupported literal {node.value!r}")
    if isinstance(node, ast.Name):
        if node.id == "I":
            return space.identity_matrix
        if node.id == "N":
            return space.number_operator_matrix
        raise ExpressionError(f"{expr!r}: unknown name {node.id!r}")
    if isinstance(node, ast.UnaryOp):
        val = _eval(node.operand, space, expr)
        if isinstance(node.op, ast.USub):
            return -val
        if isinstance(node.op, ast.UAdd):
            return val
        raise ExpressionError(f"{expr!r}: unsupported unary operator")
    if isinstance(node, ast.BinOp):
        left = _eval(node.left, space, expr)
        right = _eval(node.right, space, expr)
        if isinstance(node.op, ast.Add):
            return _add(left, right, space)
        if isinstance(node.op, ast.Sub):
            return _add(left, -right, space)
        if isinstance(node.op, ast.Mult):
            if np.isscalar(left) or np.isscalar(right):
                return left * right
            return left @ right
        raise ExpressionError(f"{expr!r}: only +, - and * are supported")
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _CALLS or node.keywords:
            raise ExpressionError(f"{expr!r}: unknown function call")
        name = node.func.id
        if name == "hc":
            if len(node.args) != 1:
                raise ExpressionError(f"{expr!r}: hc takes one argument")
            val = _eval(node.args[0], space, expr)
            return np.conj(val) if np.isscalar(val) else val.conj().T
        args = [_int_arg(a, expr) for a in node.args]
        try:
            if name == "n":
                if len(args) != 1:
                    raise ExpressionError(f"{expr!r}: n takes one site argument")
                return space.n_matrix(args[0])
            if not 1 <= len(args) <= 2:
                raise ExpressionError(f"{expr!r}: {name} takes (site[, flavor])")
            if name == "c":
                return space.a_matrix(*args)
            return space.adag_matrix(*args)
        except IndexError as exc:
            raise ExpressionError(f"{expr!r}: {exc}") from None
    raise ExpressionError(f"{expr!r}: unsupported syntax {type(node).__name__}")


def _add(a, b, space):
    if np.isscalar(a) and not np.isscalar(b):
        a = a * space.identity_matrix
    if np.isscalar(b) and not np.isscalar(a):
        b = b * space.identity_matrix
    return a + b
