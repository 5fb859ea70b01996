"""Parsing of the small scalar-expression grammar used in JSON inputs.

Allowed: ``+ - * / ^``, parentheses, numeric literals, the functions
``exp sin cos sqrt abs`` and the coordinate names of the context
(``x, y`` on the surface, ``s, x, y`` on the cylinder).
"""
import io
import tokenize

import numpy as np
import sympy

from .errors import ExpressionError

FUNCTIONS = {
    "exp": sympy.exp,
    "sin": sympy.sin,
    "cos": sympy.cos,
    "sqrt": sympy.sqrt,
    "abs": sympy.Abs,
}
_OPS = set("+-*/^()")


def parse(text, variables=("x", "y")):
    """Return a sympy expression for ``text``; reject anything off-grammar."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    symbols = {v: sympy.Symbol(v, real=True) for v in variables}
    try:
        toks = list(tokenize.generate_tokens(io.StringIO(text).readline))
    except (tokenize.TokenError, IndentationError) as exc:
        raise ExpressionError(f"cannot tokenize {text!r}: {exc}") from None
    for tok in toks:
        if tok.type in (tokenize.NEWLINE, tokenize.NL, tokenize.ENDMARKER):
            continue
        if tok.type == tokenize.NUMBER:
            if tok.string.lower().endswith("j"):
                raise ExpressionError("complex literals are not allowed")
            continue
        if tok.type == tokenize.NAME:
            if tok.string not in FUNCTIONS and tok.string not in symbols:
                raise ExpressionError(f"unknown name {tok.string!r} in {text!r}")
            continue
        if tok.type == tokenize.OP and tok.string in _OPS:
            continue
        raise ExpressionError(f"token {tok.string!r} not allowed in {text!r}")
    try:
        expr = sympy.sympify(text.replace("^", "**"), locals={**FUNCTIONS, **symbols})
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc}") from None
    return expr, [symbols[v] for v in variables]


def _vectorize(fn):
    def call(*args):
        out = fn(*args)
        shape = np.broadcast(*args).shape
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    return call


def compile_expression(text, variables=("x", "y"), derivatives=False):
    """Compile ``text`` into a numpy callable.

    With ``derivatives=True`` also returns the gradient components and the
    Euclidean Laplacian, all as callables of the same variables.
    """
    expr, syms = parse(text, variables)
    value = _vectorize(sympy.lambdify(syms, expr, "numpy"))
    if not derivatives:
        return value
    grads = [sympy.diff(expr, s) for s in syms]
    lap = sum(sympy.diff(expr, s, 2) for s in syms)
    grad_fns = [_vectorize(sympy.lambdify(syms, g, "numpy")) for g in grads]
    lap_fn = _vectorize(sympy.lambdify(syms, lap, "numpy"))
    return value, grad_fns, lap_fn
