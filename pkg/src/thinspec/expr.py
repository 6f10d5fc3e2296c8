"""Scalar expressions in the variables ``x1``, ``y1``, ``y2``.

Expressions are parsed once into an immutable tree and evaluated with
numpy broadcasting, so the same object serves pointwise queries and whole
grids.  Symbolic derivatives are exact trees built with a handful of local
simplifications (no general CAS).

>>> e = parse("1 - x1^2/2")
>>> float(e.evaluate(x1=0.5))
0.875
>>> str(e.diff("x1"))
'-x1'
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import EvalError, ExpressionSyntaxError, NotDifferentiable

VARIABLES = ("x1", "y1", "y2")
CONSTANTS = {"pi": math.pi}
FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "sqrt": 1, "abs": 1, "min": 2, "max": 2}
NONSMOOTH = {"abs", "min", "max"}


class Node:
    __slots__ = ()


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    name: str


@dataclass(frozen=True)
class Const(Node):
    name: str


@dataclass(frozen=True)
class Neg(Node):
    arg: Node


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Call(Node):
    fn: str
    args: tuple


# --------------------------------------------------------------------------
# tokenizer / parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)
_BAD_NUMBER_TAIL = re.compile(r"[.eE0-9A-Za-z_]")


def _tokenize(src):
    tokens = []
    pos = 0
    n = len(src)
    while pos < n:
        if src[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character {src[pos]!r}", pos)
        start = m.start(m.lastgroup)
        kind = m.lastgroup
        text = m.group(kind)
        if kind == "num":
            end = m.end()
            # "1.2.3", "1e", "2x" are malformed numbers
            if end < n and _BAD_NUMBER_TAIL.match(src, end):
                raise ExpressionSyntaxError(f"malformed number {src[start:end + 1]!r}", start)
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, src):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, tok, pos = self.take()
        if tok != text:
            what = "end of input" if kind == "end" else repr(tok)
            raise ExpressionSyntaxError(f"expected {text!r}, found {what}", pos)

    def parse(self):
        node = self.expr()
        kind, tok, pos = self.peek()
        if kind != "end":
            if tok == ")":
                raise ExpressionSyntaxError("unbalanced ')'", pos)
            raise ExpressionSyntaxError(f"unexpected token {tok!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()[1]
        if tok == "-":
            self.take()
            return Neg(self.unary())
        if tok == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            # right associative; the exponent may carry its own sign
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, tok, pos = self.take()
        if kind == "num":
            return Num(float(tok))
        if kind == "name":
            if tok in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                if self.peek()[1] != ")":
                    k, t, p = self.peek()
                    raise ExpressionSyntaxError(
                        "unbalanced '('" if k == "end" else f"expected ')', found {t!r}", p)
                self.take()
                if len(args) != FUNCTIONS[tok]:
                    raise ExpressionSyntaxError(
                        f"{tok} takes {FUNCTIONS[tok]} argument(s), got {len(args)}", pos)
                return Call(tok, tuple(args))
            if tok in CONSTANTS:
                return Const(tok)
            if tok in VARIABLES:
                return Var(tok)
            raise ExpressionSyntaxError(f"unknown identifier {tok!r}", pos)
        if tok == "(":
            node = self.expr()
            k, t, p = self.peek()
            if t != ")":
                raise ExpressionSyntaxError(
                    "unbalanced '('" if k == "end" else f"expected ')', found {t!r}", p)
            self.take()
            return node
        if kind == "end":
            raise ExpressionSyntaxError("unexpected end of input", pos)
        raise ExpressionSyntaxError(f"unexpected token {tok!r}", pos)


# --------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _fmt_num(v):
    if v == int(v) and abs(v) < 1e15:
        s = str(int(v))
    else:
        s = repr(float(v))
    return s


def to_text(node, parent_prec=0):
    if isinstance(node, Num):
        s = _fmt_num(abs(node.value))
        if node.value < 0 or (node.value == 0 and math.copysign(1, node.value) < 0):
            return f"(-{s})"
        return s
    if isinstance(node, (Var, Const)):
        return node.name
    if isinstance(node, Call):
        return f"{node.fn}({', '.join(to_text(a) for a in node.args)})"
    if isinstance(node, Neg):
        s = "-" + to_text(node.arg, 3)
        return f"({s})" if parent_prec >= 3 else s
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        if node.op == "^":
            left = to_text(node.left, p + 1)
            right = to_text(node.right, p)
        else:
            left = to_text(node.left, p)
            right = to_text(node.right, p + 1)
        s = f"{left}{node.op}{right}" if node.op == "^" else f"{left} {node.op} {right}"
        return f"({s})" if p < parent_prec else s
    raise TypeError(node)


# --------------------------------------------------------------------------
# evaluation

def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Const):
        return CONSTANTS[node.name]
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, BinOp):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if np.any(np.asarray(b) == 0):
                raise EvalError(f"division by zero in {to_text(node)!r}")
            return a / b
        # power
        a_arr = np.asarray(a, dtype=float)
        b_arr = np.asarray(b, dtype=float)
        if isinstance(node.right, Num) and node.right.value == int(node.right.value):
            k = int(node.right.value)
            if k < 0 and np.any(a_arr == 0):
                raise EvalError(f"zero to a negative power in {to_text(node)!r}")
            if k == 2:
                return a * a
            return np.power(a_arr, float(k)) if a_arr.ndim else float(a_arr) ** k
        bad = (a_arr < 0) & (b_arr != np.round(b_arr))
        if np.any(bad):
            raise EvalError(f"negative base with non-integer exponent in {to_text(node)!r}")
        if np.any((a_arr == 0) & (b_arr < 0)):
            raise EvalError(f"zero to a negative power in {to_text(node)!r}")
        return np.power(a_arr, b_arr)
    if isinstance(node, Call):
        vals = [_eval(a, env) for a in node.args]
        fn = node.fn
        if fn == "sqrt":
            if np.any(np.asarray(vals[0]) < 0):
                raise EvalError(f"sqrt of a negative number in {to_text(node)!r}")
            return np.sqrt(vals[0])
        if fn == "sin":
            return np.sin(vals[0])
        if fn == "cos":
            return np.cos(vals[0])
        if fn == "exp":
            return np.exp(vals[0])
        if fn == "abs":
            return np.abs(vals[0])
        if fn == "min":
            return np.minimum(vals[0], vals[1])
        if fn == "max":
            return np.maximum(vals[0], vals[1])
    raise TypeError(node)


# --------------------------------------------------------------------------
# differentiation with light simplification

ZERO = Num(0.0)
ONE = Num(1.0)


def _is_num(node, value=None):
    return isinstance(node, Num) and (value is None or node.value == value)


def _add(a, b):
    if _is_num(a, 0):
        return b
    if _is_num(b, 0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    if isinstance(b, Neg):
        return _sub(a, b.arg)
    return BinOp("+", a, b)


def _sub(a, b):
    if _is_num(b, 0):
        return a
    if _is_num(a, 0):
        return _neg(b)
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    if isinstance(b, Neg):
        return _add(a, b.arg)
    return BinOp("-", a, b)


def _neg(a):
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a, b):
    if _is_num(a, 0) or _is_num(b, 0):
        return ZERO
    if _is_num(a, 1):
        return b
    if _is_num(b, 1):
        return a
    if _is_num(a, -1):
        return _neg(b)
    if _is_num(b, -1):
        return _neg(a)
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    if isinstance(a, Neg):
        return _neg(_mul(a.arg, b))
    if isinstance(b, Neg):
        return _neg(_mul(a, b.arg))
    return BinOp("*", a, b)


def _div(a, b):
    if _is_num(a, 0):
        return ZERO
    if _is_num(b, 1):
        return a
    if isinstance(a, Neg):
        return _neg(_div(a.arg, b))
    return BinOp("/", a, b)


def _pow(a, b):
    if _is_num(b, 1):
        return a
    if _is_num(b, 0):
        return ONE
    return BinOp("^", a, b)


def _depends(node, var):
    if isinstance(node, Var):
        return node.name == var
    if isinstance(node, (Num, Const)):
        return False
    if isinstance(node, Neg):
        return _depends(node.arg, var)
    if isinstance(node, BinOp):
        return _depends(node.left, var) or _depends(node.right, var)
    if isinstance(node, Call):
        return any(_depends(a, var) for a in node.args)
    raise TypeError(node)


def _nonsmooth(node):
    if isinstance(node, Call):
        return node.fn in NONSMOOTH or any(_nonsmooth(a) for a in node.args)
    if isinstance(node, Neg):
        return _nonsmooth(node.arg)
    if isinstance(node, BinOp):
        return _nonsmooth(node.left) or _nonsmooth(node.right)
    return False


def _d(node, var):
    if isinstance(node, (Num, Const)):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.name == var else ZERO
    if isinstance(node, Neg):
        return _neg(_d(node.arg, var))
    if isinstance(node, BinOp):
        u, v = node.left, node.right
        if node.op == "+":
            return _add(_d(u, var), _d(v, var))
        if node.op == "-":
            return _sub(_d(u, var), _d(v, var))
        if node.op == "*":
            return _add(_mul(_d(u, var), v), _mul(u, _d(v, var)))
        if node.op == "/":
            du, dv = _d(u, var), _d(v, var)
            if _is_num(dv, 0):
                return _div(du, v)
            return _div(_sub(_mul(du, v), _mul(u, dv)), _pow(v, Num(2.0)))
        if node.op == "^":
            if _depends(v, var):
                raise NotDifferentiable(
                    f"variable exponent in {to_text(node)!r} is not supported")
            du = _d(u, var)
            if _is_num(du, 0):
                return ZERO
            exponent = Num(v.value - 1.0) if _is_num(v) else _sub(v, ONE)
            return _mul(_mul(v, _pow(u, exponent)), du)
    if isinstance(node, Call):
        if node.fn in NONSMOOTH:
            raise NotDifferentiable(f"{node.fn} is not differentiable")
        (u,) = node.args
        du = _d(u, var)
        if _is_num(du, 0):
            return ZERO
        if node.fn == "sin":
            outer = Call("cos", (u,))
        elif node.fn == "cos":
            outer = _neg(Call("sin", (u,)))
        elif node.fn == "exp":
            outer = node
        elif node.fn == "sqrt":
            outer = _div(ONE, _mul(Num(2.0), node))
        else:  # pragma: no cover
            raise NotDifferentiable(node.fn)
        return _mul(outer, du)
    raise TypeError(node)


# --------------------------------------------------------------------------
# public surface

class CoefficientExpr:
    """A parsed, immutable expression in ``(x1, y1, y2)``."""

    __slots__ = ("ast", "source")

    def __init__(self, ast, source=None):
        self.ast = ast
        self.source = source if source is not None else to_text(ast)

    def __str__(self):
        return to_text(self.ast)

    def __repr__(self):
        return f"CoefficientExpr({str(self)!r})"

    def evaluate(self, x1=0.0, y1=0.0, y2=0.0):
        """Value at a point, or elementwise on broadcastable arrays."""
        env = {"x1": x1, "y1": y1, "y2": y2}
        out = _eval(self.ast, env)
        if np.ndim(out) == 0 and not any(np.ndim(v) for v in env.values()):
            return float(out)
        shape = np.broadcast(np.asarray(x1), np.asarray(y1), np.asarray(y2)).shape
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    __call__ = evaluate

    def diff(self, var):
        if var not in VARIABLES:
            raise ValueError(f"unknown variable {var!r}")
        if _nonsmooth(self.ast):
            raise NotDifferentiable(f"{self.source!r} contains abs/min/max")
        return CoefficientExpr(_d(self.ast, var))

    def depends_on(self, var):
        return _depends(self.ast, var)

    @property
    def is_constant(self):
        return not any(_depends(self.ast, v) for v in VARIABLES)


def parse(source):
    if not isinstance(source, str) or not source.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    return CoefficientExpr(_Parser(source).parse(), source.strip())


def evaluate(e, x1=0.0, y1=0.0, y2=0.0):
    if isinstance(e, str):
        e = parse(e)
    return e.evaluate(x1, y1, y2)


def differentiate(e, var):
    if isinstance(e, str):
        e = parse(e)
    return e.diff(var)
