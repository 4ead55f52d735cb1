"""Numeric callables from expression strings (sympy, vectorized over leading axes)."""
from __future__ import annotations

import ast

import numpy as np
import sympy as sp

_NAMESPACE = {name: getattr(sp, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "sinh", "cosh", "tanh", "atan", "atan2", "Abs", "pi", "E",
)}


def symbols(prefix: str, count: int):
    return [sp.Symbol(f"{prefix}{i}", real=True) for i in range(count)]


_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
          ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def _check_syntax(text: str, names) -> None:
    # sympify evaluates its input, so only arithmetic on known names gets through
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ValueError(f"expression {text!r}: {type(node).__name__} is not allowed")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ValueError(f"expression {text!r}: only numeric constants are allowed")
        if isinstance(node, ast.Call) and (not isinstance(node.func, ast.Name) or node.func.id not in _NAMESPACE
                                           or node.keywords):
            raise ValueError(f"expression {text!r}: unknown function call")
        if isinstance(node, ast.Name) and node.id not in names:
            raise ValueError(f"expression {text!r} uses unknown symbols: {node.id}")


def parse(text, allowed) -> sp.Expr:
    """Parse ``text`` admitting only the ``allowed`` symbols and elementary functions.

    Sympy objects and plain numbers pass through without re-parsing.
    """
    local = dict(_NAMESPACE)
    local.update({str(s): s for s in allowed})
    if isinstance(text, sp.Basic):
        expr = text
    elif isinstance(text, (int, float)):
        expr = sp.Float(text)
    else:
        _check_syntax(str(text), local)
        try:
            expr = sp.sympify(text, locals=local, rational=False)
        except (sp.SympifyError, SyntaxError, TypeError) as exc:
            raise ValueError(f"cannot parse expression {text!r}: {exc}") from None
    unknown = expr.free_symbols - set(allowed)
    if unknown:
        names = ", ".join(sorted(str(s) for s in unknown))
        raise ValueError(f"expression {text!r} uses unknown symbols: {names}")
    return expr


def compile_array(entries, groups, shape=None):
    """Vectorized function of one argument array per symbol group.

    ``entries`` is a nested list of expression strings or numbers; ``groups``
    is a list of symbol lists. Each argument has its symbols on the last axis;
    the result has shape ``leading + shape``.
    """
    arr = np.asarray(entries, dtype=object)
    shape = arr.shape if shape is None else shape
    flat_syms = [s for g in groups for s in g]
    exprs = [parse(e, flat_syms) for e in arr.reshape(-1)]
    fn = sp.lambdify(flat_syms, exprs, modules="numpy")

    def evaluate(*args):
        args = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
        lead = args[0].shape[:-1]
        cols = [a[..., i] for a, g in zip(args, groups) for i in range(len(g))]
        values = fn(*cols)
        out = np.stack([np.broadcast_to(np.asarray(v, dtype=float), lead) for v in values], axis=-1)
        return out.reshape(lead + tuple(shape))

    return evaluate


def compile_field(entries, n: int):
    """Field of ``x0..x{n-1}`` and its exact gradient (extra trailing axis ``k``)."""
    xs = symbols("x", n)
    arr = np.asarray(entries, dtype=object)
    exprs = np.array([parse(e, xs) for e in arr.reshape(-1)], dtype=object)
    grads = [[sp.diff(e, x) for x in xs] for e in exprs]
    value = compile_array(exprs.reshape(arr.shape).tolist(), [xs], arr.shape)
    gradient = compile_array(grads, [xs], arr.shape + (n,))
    return value, gradient
