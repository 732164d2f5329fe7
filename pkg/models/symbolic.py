"""
Symbolic map and perturbation expressions.

Expressions are parsed with sympy, with decimal literals turned into exact
rationals, and then compiled into vectorized interval oracles. The grammar is
small: the variable x (plus eps for one-parameter families), numbers, pi,
+ - * /, integer powers, sin, cos and exp.
"""

from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (
    convert_xor,
    parse_expr,
    rationalize,
    standard_transformations,
)

from models.rigor import PI, Interval, iv_cos, iv_exp, iv_sin, pow_int
from utils.exceptions import ConfigurationError, ParseError

X = sp.Symbol("x", real=True)
EPS = sp.Symbol("eps", real=True)
XI = sp.Symbol("xi", real=True)

_TRANSFORMS = standard_transformations + (convert_xor, rationalize)
_FUNCTIONS = {sp.sin: iv_sin, sp.cos: iv_cos, sp.exp: iv_exp}

IntervalOracle = Callable[[Interval], Interval]


def parse_expression(
    text: str,
    symbols: Sequence[sp.Symbol] = (X, EPS),
    line: Optional[int] = None,
) -> sp.Expr:
    """Parse and validate an expression string."""
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty expression", line=line, column=0)
    local = {s.name: s for s in symbols}
    local.update({"pi": sp.pi, "sin": sp.sin, "cos": sp.cos, "exp": sp.exp})
    try:
        expr = parse_expr(text, local_dict=local, transformations=_TRANSFORMS)
    except Exception as exc:
        column = getattr(exc, "offset", None)
        if column is None and len(getattr(exc, "args", ())) > 1:
            position = exc.args[1]
            if isinstance(position, tuple) and len(position) == 2:
                column = position[1]
        raise ParseError(f"malformed expression {text!r}: {exc}", line=line,
                         column=column, cause=exc) from exc
    validate_expression(expr, symbols, text=text, line=line)
    return expr


def validate_expression(
    expr: sp.Expr,
    symbols: Sequence[sp.Symbol],
    text: str = "",
    line: Optional[int] = None,
) -> None:
    """Reject anything outside the supported grammar."""
    allowed = set(symbols)
    for node in sp.preorder_traversal(expr):
        if isinstance(node, sp.Symbol):
            if node not in allowed:
                raise ParseError(f"unknown name {node.name!r} in {text!r}", line=line,
                                 column=_find_column(text, node.name))
        elif node.is_Number:
            if not node.is_Rational:
                raise ParseError(f"unsupported number {node} in {text!r}", line=line)
        elif node in (sp.pi, sp.E):
            continue
        elif isinstance(node, (sp.Add, sp.Mul)):
            continue
        elif isinstance(node, sp.Pow):
            if not node.exp.is_Integer:
                raise ParseError(f"only integer powers are supported: {node}", line=line)
        elif isinstance(node, sp.Function) and node.func in _FUNCTIONS:
            continue
        else:
            raise ParseError(f"unsupported construct {node} in {text!r}", line=line,
                             column=_find_column(text, str(getattr(node, "func", node))))


def _find_column(text: str, token: str) -> Optional[int]:
    pos = text.find(token)
    return pos if pos >= 0 else None


def _broadcast(value: Interval, like: Interval) -> Interval:
    if value.shape == like.shape:
        return value
    lo = np.broadcast_to(value.lo, like.shape).copy()
    hi = np.broadcast_to(value.hi, like.shape).copy()
    return Interval(lo, hi)


def _constant(node: sp.Expr) -> Interval:
    if node.is_Rational:
        return Interval.from_fraction(Fraction(int(node.p), int(node.q)))
    if node == sp.pi:
        return PI
    if node == sp.E:
        return iv_exp(Interval(1.0))
    raise ParseError(f"unsupported constant {node}")


def _build(node: sp.Expr, var: sp.Symbol) -> IntervalOracle:
    if node == var:
        return lambda x: x
    if node.is_Number or node in (sp.pi, sp.E):
        c = _constant(node)
        return lambda x: c
    if isinstance(node, sp.Add):
        parts = [_build(a, var) for a in node.args]

        def add(x):
            out = parts[0](x)
            for p in parts[1:]:
                out = out + p(x)
            return out
        return add
    if isinstance(node, sp.Mul):
        parts = [_build(a, var) for a in node.args]

        def mul(x):
            out = parts[0](x)
            for p in parts[1:]:
                out = out * p(x)
            return out
        return mul
    if isinstance(node, sp.Pow):
        base = _build(node.base, var)
        n = int(node.exp)
        return lambda x: pow_int(base(x), n)
    if isinstance(node, sp.Function) and node.func in _FUNCTIONS:
        inner = _build(node.args[0], var)
        fn = _FUNCTIONS[node.func]
        return lambda x: fn(inner(x))
    raise ParseError(f"cannot compile {node}")


def compile_interval(expr: sp.Expr, var: sp.Symbol = X) -> IntervalOracle:
    """Vectorized interval oracle for expr as a function of var."""
    free = expr.free_symbols - {var}
    if free:
        raise ParseError(f"expression has free symbols {sorted(s.name for s in free)}")
    body = _build(expr, var)
    return lambda x: _broadcast(body(x), x)


def compile_float(expr: sp.Expr, var: sp.Symbol = X) -> Callable[[np.ndarray], np.ndarray]:
    """Plain numpy evaluation, for sampling and floating iterations only."""
    fn = sp.lambdify(var, expr, "numpy")
    return lambda x: np.broadcast_to(np.asarray(fn(np.asarray(x, dtype=float)), dtype=float),
                                     np.shape(x)).copy()


def derivatives(expr: sp.Expr, order: int = 3, var: sp.Symbol = X) -> List[sp.Expr]:
    """[expr, expr', ..., expr^(order)]."""
    out = [expr]
    for _ in range(order):
        out.append(sp.diff(out[-1], var))
    return out


def split_family(expr: sp.Expr) -> Tuple[sp.Expr, sp.Expr]:
    """Split T_eps = T0 + eps*S + o(eps) into (T0, S)."""
    t0 = expr.subs(EPS, 0)
    direction = sp.diff(expr, EPS).subs(EPS, 0)
    return t0, direction


def enclose_constant(expr: sp.Expr) -> Interval:
    """Enclosure of a closed-form real constant."""
    if expr.free_symbols:
        raise ParseError(f"not a constant: {expr}")
    return compile_interval(expr)(Interval(0.0))


def kernel_moment(kernel: sp.Expr) -> sp.Expr:
    """
    First absolute moment of a noise kernel supported on [-1/2, 1/2].

    The kernel must have unit mass; the check is exact.
    """
    half = sp.Rational(1, 2)
    mass = sp.integrate(kernel, (XI, -half, half))
    if sp.simplify(mass - 1) != 0:
        raise ConfigurationError(f"noise kernel has mass {mass}, expected 1",
                                 config_key="perturbation.kernel")
    moment = sp.integrate(-XI * kernel, (XI, -half, 0)) + sp.integrate(XI * kernel, (XI, 0, half))
    return sp.simplify(moment)
