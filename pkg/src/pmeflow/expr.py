"""A tiny expression language for growth laws ``G(p, n)``.

Grammar: numbers, the variables ``p`` and ``n``, named parameters, the binary
operators ``+ - * /``, unary minus, parentheses and the functions ``min``,
``max`` and ``exp``. Expressions evaluate elementwise on NumPy arrays.
"""
import ast

import numpy as np

_FUNCS = {"min": np.minimum, "max": np.maximum, "exp": np.exp}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide}


class ExpressionError(ValueError):
    pass


def _compile(node, params):
    if isinstance(node, ast.Expression):
        return _compile(node.body, params)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        value = float(node.value)
        return lambda p, n: np.full(np.broadcast(p, n).shape, value)
    if isinstance(node, ast.Name):
        if node.id == "p":
            return lambda p, n: np.broadcast_to(np.asarray(p, float), np.broadcast(p, n).shape)
        if node.id == "n":
            return lambda p, n: np.broadcast_to(np.asarray(n, float), np.broadcast(p, n).shape)
        if node.id in params:
            value = float(params[node.id])
            return lambda p, n: np.full(np.broadcast(p, n).shape, value)
        raise ExpressionError(f"unknown name {node.id!r}")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        left, right = _compile(node.left, params), _compile(node.right, params)
        return lambda p, n: op(left(p, n), right(p, n))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _compile(node.operand, params)
        if isinstance(node.op, ast.UAdd):
            return inner
        return lambda p, n: np.negative(inner(p, n))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if node.keywords:
            raise ExpressionError("keyword arguments are not allowed")
        fn = _FUNCS[node.func.id]
        args = [_compile(a, params) for a in node.args]
        if node.func.id == "exp":
            if len(args) != 1:
                raise ExpressionError("exp takes one argument")
            return lambda p, n: fn(args[0](p, n))
        if len(args) < 2:
            raise ExpressionError(f"{node.func.id} needs at least two arguments")

        def call(p, n):
            out = args[0](p, n)
            for a in args[1:]:
                out = fn(out, a(p, n))
            return out

        return call
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def compile_expression(text, params=None):
    """Compile ``text`` into a vectorised callable ``G(p, n)``."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    fn = _compile(tree, params or {})

    def growth(p, n):
        return np.asarray(fn(p, n), dtype=np.float64)

    growth.source = text
    return growth
