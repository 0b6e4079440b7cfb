"""Coordinate expression language with exact second-order jets.

Expressions are parsed once into an immutable tree and evaluated by forward
propagation of truncated Taylor coefficients (value, gradient, hessian).
Evaluation is vectorised over a leading batch of points.

    >>> e = parse("sin(x0)*x1", ["x0", "x1"])
    >>> j = e.jet([0.0, 2.0])
    >>> j.value, j.grad.tolist(), j.hess[0, 1]
    (0.0, [2.0, 0.0], 1.0)
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "ExpressionError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "ArityError",
    "DomainError",
    "Expression",
    "Jet2",
    "parse",
    "evaluate_jet",
    "FUNCTIONS",
    "CONSTANTS",
]


class ExpressionError(ValueError):
    """Base class for parse and evaluation failures."""


class ExprSyntaxError(ExpressionError):
    def __init__(self, message: str, source: str, offset: int):
        self.source = source
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset} in {source!r}")


class UnknownIdentifierError(ExprSyntaxError):
    pass


class ArityError(ExprSyntaxError):
    pass


class DomainError(ExpressionError):
    """Raised when a subexpression leaves its domain (ln of 0, sqrt of -1, ...)."""

    def __init__(self, message: str, subexpression: str, point=None):
        self.subexpression = subexpression
        self.point = point
        where = "" if point is None else f" at point {[float(c) for c in np.atleast_1d(point)]}"
        super().__init__(f"{message} in {subexpression!r}{where}")


FUNCTIONS = {
    "sin": 1, "cos": 1, "tan": 1, "exp": 1, "ln": 1, "sqrt": 1,
    "sinh": 1, "cosh": 1, "tanh": 1, "abs": 1, "pow": 2,
}
CONSTANTS = {"pi": math.pi, "e": math.e}


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Const:
    name: str

    @property
    def value(self) -> float:
        return CONSTANTS[self.name]


@dataclass(frozen=True)
class Coord:
    index: int
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "-" or "+"
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Node = Num | Const | Coord | Unary | Binary | Call


def _free_coords(node) -> frozenset:
    if isinstance(node, Coord):
        return frozenset((node.index,))
    if isinstance(node, Unary):
        return _free_coords(node.operand)
    if isinstance(node, Binary):
        return _free_coords(node.left) | _free_coords(node.right)
    if isinstance(node, Call):
        out = frozenset()
        for a in node.args:
            out |= _free_coords(a)
        return out
    return frozenset()


def to_source(node) -> str:
    """Serialise a tree back to parseable text (fully parenthesised)."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Coord):
        return node.name
    if isinstance(node, Unary):
        return f"({node.op}{to_source(node.operand)})"
    if isinstance(node, Binary):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_source(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


# --------------------------------------------------------------------------
# Parser (recursive descent)
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[^\W\d]\w*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _byte_offset(source: str, index: int) -> int:
    return len(source[:index].encode("utf-8"))


class _Parser:
    def __init__(self, source: str, coords: Sequence[str]):
        self.source = source
        self.coords = {name: i for i, name in enumerate(coords)}
        self.tokens = self._tokenize()
        self.pos = 0

    def _tokenize(self):
        src = self.source
        out = []
        i = 0
        while i < len(src):
            if src[i].isspace():
                i += 1
                continue
            m = _TOKEN.match(src, i)
            if m is None or m.end() == i:
                raise ExprSyntaxError(f"unexpected character {src[i]!r}", src, _byte_offset(src, i))
            kind = m.lastgroup
            start = m.start(kind)
            out.append((kind, m.group(kind), start))
            i = m.end()
        out.append(("end", "", len(src)))
        return out

    def _peek(self):
        return self.tokens[self.pos]

    def _next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def _error(self, message, tok, cls=ExprSyntaxError):
        return cls(message, self.source, _byte_offset(self.source, tok[2]))

    def _expect(self, value):
        tok = self._next()
        if tok[0] != "op" or tok[1] != value:
            found = "end of input" if tok[0] == "end" else repr(tok[1])
            raise self._error(f"expected {value!r}, found {found}", tok)
        return tok

    def parse(self):
        if self._peek()[0] == "end":
            raise self._error("empty expression", self._peek())
        node = self.expr()
        tok = self._peek()
        if tok[0] != "end":
            raise self._error(f"unexpected token {tok[1]!r}", tok)
        return node

    def expr(self):
        node = self.term()
        while self._peek()[0] == "op" and self._peek()[1] in "+-":
            op = self._next()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self._peek()[0] == "op" and self._peek()[1] in "*/":
            op = self._next()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self):
        tok = self._peek()
        if tok[0] == "op" and tok[1] in "+-":
            self._next()
            return Unary(tok[1], self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        tok = self._peek()
        if tok[0] == "op" and tok[1] == "^":
            self._next()
            # right associative; exponent may carry a sign: x^-2
            return Binary("^", base, self.unary())
        return base

    def atom(self):
        tok = self._next()
        kind, text, _ = tok
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            nxt = self._peek()
            if nxt[0] == "op" and nxt[1] == "(" and text in FUNCTIONS and text not in self.coords:
                return self.call(tok)
            if text in self.coords:
                return Coord(self.coords[text], text)
            if text in CONSTANTS:
                return Const(text)
            if text in FUNCTIONS:
                raise self._error(f"function {text!r} used without arguments", tok, ArityError)
            raise self._error(f"unknown identifier {text!r}", tok, UnknownIdentifierError)
        if kind == "op" and text == "(":
            node = self.expr()
            self._expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise self._error(f"unexpected {found}", tok)

    def call(self, name_tok):
        name = name_tok[1]
        self._expect("(")
        args = []
        if not (self._peek()[0] == "op" and self._peek()[1] == ")"):
            args.append(self.expr())
            while self._peek()[0] == "op" and self._peek()[1] == ",":
                self._next()
                args.append(self.expr())
        self._expect(")")
        if len(args) != FUNCTIONS[name]:
            raise self._error(
                f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}", name_tok, ArityError
            )
        return Call(name, tuple(args))


# --------------------------------------------------------------------------
# Jets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Jet2:
    """Value of a scalar field with its gradient and hessian.

    For batched evaluation the arrays carry the batch shape in front:
    ``value`` (...), ``grad`` (..., n), ``hess`` (..., n, n).
    """

    value: np.ndarray | float
    grad: np.ndarray
    hess: np.ndarray


class _J:
    """Internal jet. ``g``/``h`` set to None mean identically zero."""

    __slots__ = ("v", "g", "h")

    def __init__(self, v, g=None, h=None):
        self.v = v
        self.g = g
        self.h = h


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _scale(arr, s):
    # arr (B, n) or (B, n, n); s (B,)
    if arr is None:
        return None
    return arr * s.reshape(s.shape + (1,) * (arr.ndim - 1))


def _outer(a, b):
    return a[:, :, None] * b[:, None, :]


class _Evaluator:
    def __init__(self, points: np.ndarray, order: int):
        self.x = points  # (B, n)
        self.order = order
        self.B, self.n = points.shape
        self.eye = np.eye(self.n)

    def const(self, c):
        return _J(np.full(self.B, float(c)))

    def coord(self, i):
        g = None
        if self.order >= 1:
            g = np.zeros((self.B, self.n))
            g[:, i] = 1.0
        return _J(self.x[:, i].copy(), g)

    def neg(self, a):
        return _J(-a.v, None if a.g is None else -a.g, None if a.h is None else -a.h)

    def add(self, a, b):
        return _J(a.v + b.v, _add(a.g, b.g), _add(a.h, b.h))

    def sub(self, a, b):
        return self.add(a, self.neg(b))

    def mul(self, a, b):
        v = a.v * b.v
        g = h = None
        if self.order >= 1:
            g = _add(_scale(a.g, b.v), _scale(b.g, a.v))
        if self.order >= 2:
            h = _add(_scale(a.h, b.v), _scale(b.h, a.v))
            if a.g is not None and b.g is not None:
                h = _add(h, _outer(a.g, b.g) + _outer(b.g, a.g))
        return _J(v, g, h)

    def chain(self, a, f0, f1, f2):
        """Compose a scalar function with derivatives f1, f2 onto jet a."""
        g = h = None
        if self.order >= 1 and a.g is not None:
            g = _scale(a.g, f1)
        if self.order >= 2:
            h = _scale(a.h, f1)
            if a.g is not None:
                h = _add(h, _scale(_outer(a.g, a.g), f2))
        return _J(f0, g, h)

    def powi(self, a, k: int):
        if k == 0:
            return self.const(1.0)
        if k < 0:
            return self.recip(self.powi(a, -k))
        result = None
        base = a
        while k:
            if k & 1:
                result = base if result is None else self.mul(result, base)
            k >>= 1
            if k:
                base = self.mul(base, base)
        return result

    def recip(self, a):
        u = a.v
        return self.chain(a, 1.0 / u, -1.0 / (u * u), 2.0 / (u * u * u))


def _is_integer_exponent(node):
    if _free_coords(node):
        return None
    val = _eval_constant(node)
    if math.isfinite(val) and float(val).is_integer() and abs(val) <= 1024:
        return int(val)
    return None


def _eval_constant(node) -> float:
    ev = _Evaluator(np.zeros((1, 1)), 0)
    return float(_walk(node, ev).v[0])


def _domain_check(mask, message, node, ev):
    if np.any(mask):
        bad = int(np.argmax(mask))
        raise DomainError(message, to_source(node), ev.x[bad])


def _walk(node, ev: _Evaluator):
    if isinstance(node, Num):
        return ev.const(node.value)
    if isinstance(node, Const):
        return ev.const(node.value)
    if isinstance(node, Coord):
        return ev.coord(node.index)
    if isinstance(node, Unary):
        a = _walk(node.operand, ev)
        return ev.neg(a) if node.op == "-" else a
    if isinstance(node, Binary):
        if node.op == "^":
            return _power(node, node.left, node.right, ev)
        a = _walk(node.left, ev)
        b = _walk(node.right, ev)
        if node.op == "+":
            return ev.add(a, b)
        if node.op == "-":
            return ev.sub(a, b)
        if node.op == "*":
            return ev.mul(a, b)
        _domain_check(b.v == 0.0, "division by zero", node, ev)
        return ev.mul(a, ev.recip(b))
    if isinstance(node, Call):
        if node.func == "pow":
            return _power(node, node.args[0], node.args[1], ev)
        a = _walk(node.args[0], ev)
        return _call1(node, a, ev)
    raise TypeError(f"not an expression node: {node!r}")


def _power(node, base_node, exp_node, ev):
    k = _is_integer_exponent(exp_node)
    a = _walk(base_node, ev)
    if k is not None:
        if k < 0:
            _domain_check(a.v == 0.0, "zero raised to a negative power", node, ev)
        return ev.powi(a, k)
    _domain_check(a.v <= 0.0, "non-integer power of a non-positive base", node, ev)
    b = _walk(exp_node, ev)
    u = a.v
    log_a = ev.chain(a, np.log(u), 1.0 / u, -1.0 / (u * u))
    prod = ev.mul(b, log_a)
    ex = np.exp(prod.v)
    return ev.chain(prod, ex, ex, ex)


def _call1(node, a, ev):
    u = a.v
    f = node.func
    if f == "sin":
        s, c = np.sin(u), np.cos(u)
        return ev.chain(a, s, c, -s)
    if f == "cos":
        s, c = np.sin(u), np.cos(u)
        return ev.chain(a, c, -s, -c)
    if f == "tan":
        c = np.cos(u)
        _domain_check(c == 0.0, "tan at a pole", node, ev)
        t = np.tan(u)
        sec2 = 1.0 + t * t
        return ev.chain(a, t, sec2, 2.0 * t * sec2)
    if f == "exp":
        ex = np.exp(u)
        return ev.chain(a, ex, ex, ex)
    if f == "ln":
        _domain_check(u <= 0.0, "ln of a non-positive argument", node, ev)
        return ev.chain(a, np.log(u), 1.0 / u, -1.0 / (u * u))
    if f == "sqrt":
        if ev.order >= 1 and a.g is not None:
            _domain_check(u <= 0.0, "sqrt not differentiable at a non-positive argument", node, ev)
        else:
            _domain_check(u < 0.0, "sqrt of a negative argument", node, ev)
        r = np.sqrt(u)
        with np.errstate(divide="ignore"):
            d1 = 0.5 / r
            d2 = -0.25 / (r * u)
        return ev.chain(a, r, d1, d2)
    if f == "sinh":
        s, c = np.sinh(u), np.cosh(u)
        return ev.chain(a, s, c, s)
    if f == "cosh":
        s, c = np.sinh(u), np.cosh(u)
        return ev.chain(a, c, s, c)
    if f == "tanh":
        t = np.tanh(u)
        d1 = 1.0 - t * t
        return ev.chain(a, t, d1, -2.0 * t * d1)
    if f == "abs":
        if ev.order >= 1 and a.g is not None:
            _domain_check(u == 0.0, "abs not differentiable at 0", node, ev)
        return ev.chain(a, np.abs(u), np.sign(u), np.zeros_like(u))
    raise TypeError(f"unknown function {f!r}")


# --------------------------------------------------------------------------
# Public surface
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Expression:
    """Parsed coordinate expression. Immutable; evaluation is re-entrant."""

    root: Node
    coords: tuple
    free_coords: frozenset = field(default=frozenset())

    def __post_init__(self):
        object.__setattr__(self, "free_coords", _free_coords(self.root))

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def is_constant(self) -> bool:
        return not self.free_coords

    def to_source(self) -> str:
        return to_source(self.root)

    def __str__(self) -> str:
        return self.to_source()

    def jet(self, point, order: int = 2) -> Jet2:
        return evaluate_jet(self, point, order)

    def __call__(self, point):
        return evaluate_jet(self, point, 0).value


def parse(source: str, coords: Sequence[str]) -> Expression:
    """Parse ``source`` over the named coordinates.

    Numbers are parsed as floats. ``^`` binds tighter than unary minus and is
    right associative, so ``-x^2`` is ``-(x^2)`` and ``2^3^2`` is ``2^9``.
    """
    if isinstance(source, (int, float)) and not isinstance(source, bool):
        source = repr(float(source))
    if not isinstance(source, str):
        raise ExprSyntaxError(f"expression must be text, got {type(source).__name__}", str(source), 0)
    root = _Parser(source, list(coords)).parse()
    return Expression(root, tuple(coords))


def evaluate_jet(expr: Expression, point, order: int = 2) -> Jet2:
    """Value, gradient and hessian of ``expr`` at ``point``.

    ``point`` may be a single point of shape (n,) or a batch (..., n).
    Derivatives above ``order`` are returned zero-filled.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    pts = np.asarray(point, dtype=float)
    n = expr.dim
    if pts.shape[-1:] != (n,) and not (n == 0 and pts.ndim == 1 and pts.size == 0):
        raise ValueError(f"point has shape {pts.shape}, expected (..., {n})")
    batch_shape = pts.shape[:-1]
    flat = pts.reshape(int(np.prod(batch_shape, dtype=int)), n)
    ev = _Evaluator(flat, order)
    j = _walk(expr.root, ev)
    B = flat.shape[0]
    grad = np.zeros((B, n)) if j.g is None or order < 1 else j.g
    hess = np.zeros((B, n, n)) if j.h is None or order < 2 else j.h
    value = j.v.reshape(batch_shape)
    grad = grad.reshape(batch_shape + (n,))
    hess = hess.reshape(batch_shape + (n, n))
    if not batch_shape:
        value = float(value)
    return Jet2(value, grad, hess)
