"""Scalar expressions over x1..xn with exact symbolic first and second derivatives.

Grammar (standard precedence, ``^`` binds tightest and right-associates)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' INT)*
    atom   := NUMBER | 'x' INT | FUNC '(' expr ')' | '(' expr ')'
    FUNC   := sin | cos | exp | log | sqrt

Exponents are nonnegative integer literals. Variables are 1-based in the
source text (``x1``) and 0-based everywhere in the Python API.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")

Number = Union[int, float]


class ExprSyntaxError(ValueError):
    """Raised for malformed expression text; carries the byte offset."""

    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} at offset {offset}")


class EvaluationError(ArithmeticError):
    """Domain error during evaluation (division by zero, log/sqrt outside domain)."""

    def __init__(self, message: str, subterm: "Expr"):
        self.subterm = subterm
        super().__init__(f"{message} in subterm '{to_string(subterm)}'")


# ---------------------------------------------------------------- AST nodes


@dataclass(frozen=True)
class Const:
    value: Number


@dataclass(frozen=True)
class Var:
    index: int  # 0-based


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Func:
    name: str
    arg: "Expr"


Expr = Union[Const, Var, BinOp, Neg, Pow, Func]

ZERO = Const(0)
ONE = Const(1)


def _is_const(e: Expr, value: Number | None = None) -> bool:
    if not isinstance(e, Const):
        return False
    return value is None or e.value == value


# Smart constructors: constant folding plus the 0/1 identities.


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is_const(a, 0) or _is_const(b, 0):
        return ZERO
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        q = a.value / b.value
        if isinstance(a.value, int) and isinstance(b.value, int) and a.value % b.value == 0:
            q = a.value // b.value
        return Const(q)
    if _is_const(b, 1):
        return a
    if _is_const(a, 0) and not _is_const(b, 0):
        return ZERO
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, k: int) -> Expr:
    if k == 0:
        return ONE
    if k == 1:
        return a
    if isinstance(a, Const):
        return Const(a.value**k)
    return Pow(a, k)


def func(name: str, a: Expr) -> Expr:
    return Func(name, a)


_BINARY = {"+": add, "-": sub, "*": mul, "/": div}


# ------------------------------------------------------------------ parsing

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<var>x(?P<vidx>\d+))"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    end = len(source)
    while pos < end:
        if source[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            offset = len(source[:pos].encode("utf-8"))
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", offset, source)
        start = m.start(m.lastgroup) if m.lastgroup else pos
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), start))
        elif m.group("var") is not None:
            tokens.append(("var", m.group("vidx"), start))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name"), start))
        else:
            tokens.append(("op", m.group("op"), start))
        pos = m.end()
    tokens.append(("end", "", end))
    return tokens


class _Parser:
    def __init__(self, source: str, n: int | None):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0
        self.n = n

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, len(self.source[: tok[2]].encode("utf-8")), self.source)

    def expect(self, value):
        tok = self.next()
        if tok[0] != "op" or tok[1] != value:
            self.error(f"expected {value!r}", tok)

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            self.error("empty expression")
        e = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected token {self.peek()[1]!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.next()[1]
            e = _BINARY[op](e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.next()[1]
            e = _BINARY[op](e, self.unary())
        return e

    def unary(self) -> Expr:
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.next()
            return neg(self.unary())
        if tok[0] == "op" and tok[1] == "+":
            self.next()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if not (self.peek()[0] == "op" and self.peek()[1] == "^"):
            return base
        return power(base, self.exponent())

    def exponent(self) -> int:
        # right-associative chain of integer literals: a^2^3 = a^(2^3)
        self.next()
        tok = self.next()
        if tok[0] != "num" or not tok[1].isdigit():
            self.error("exponent must be a nonnegative integer literal", tok)
        k = int(tok[1])
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            k = k ** self.exponent()
        return k

    def atom(self) -> Expr:
        tok = self.next()
        kind, text, _ = tok
        if kind == "num":
            if re.fullmatch(r"\d+", text):
                return Const(int(text))
            return Const(float(text))
        if kind == "var":
            k = int(text)
            if k < 1 or (self.n is not None and k > self.n):
                limit = "" if self.n is None else f" (n = {self.n})"
                self.error(f"variable index x{k} out of range{limit}", tok)
            return Var(k - 1)
        if kind == "name":
            if text not in FUNCTIONS:
                self.error(f"unknown identifier {text!r}", tok)
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return func(text, arg)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        self.error("unexpected end of input" if kind == "end" else f"unexpected token {text!r}", tok)


def parse(source: str, n: int | None = None) -> Expr:
    """Parse expression text. With ``n`` given, variable indices are checked against it."""
    return _Parser(source, n).parse()


# ----------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Const) and e.value < 0:
        return 3
    if isinstance(e, Pow):
        return 4
    return 5


def _const_str(v: Number) -> str:
    if isinstance(v, int):
        return str(v)
    if v.is_integer() and abs(v) < 1e16:
        return f"{v:.1f}"
    return repr(v)


def to_string(e: Expr) -> str:
    """Canonical printer; ``parse(to_string(e)) == e`` for every parsed ``e``."""
    if isinstance(e, Const):
        return _const_str(e.value)
    if isinstance(e, Var):
        return f"x{e.index + 1}"
    if isinstance(e, Func):
        return f"{e.name}({to_string(e.arg)})"
    if isinstance(e, Neg):
        inner = to_string(e.arg)
        return f"-({inner})" if _prec(e.arg) < 3 else f"-{inner}"
    if isinstance(e, Pow):
        base = to_string(e.base)
        if _prec(e.base) < 5:
            base = f"({base})"
        return f"{base}^{e.exponent}"
    p = _PREC[e.op]
    left = to_string(e.left)
    if _prec(e.left) < p:
        left = f"({left})"
    right = to_string(e.right)
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {e.op} {right}"


def max_variable_index(e: Expr) -> int:
    """Largest 0-based variable index in ``e``; -1 for constant expressions."""
    if isinstance(e, Var):
        return e.index
    if isinstance(e, Const):
        return -1
    if isinstance(e, BinOp):
        return max(max_variable_index(e.left), max_variable_index(e.right))
    if isinstance(e, Pow):
        return max_variable_index(e.base)
    return max_variable_index(e.arg)


# -------------------------------------------------------------- evaluation


def evaluate(e: Expr, x: Sequence[float] | np.ndarray):
    """Reference tree-walking evaluator.

    ``x`` may hold scalars or equally shaped numpy arrays (grid evaluation).
    Domain violations raise :class:`EvaluationError` naming the subterm.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return x[e.index]
    if isinstance(e, Neg):
        return -evaluate(e.arg, x)
    if isinstance(e, Pow):
        base = evaluate(e.base, x)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                return _finite(np.float64(base) ** e.exponent if np.ndim(base) == 0 else base**e.exponent, e)
        except OverflowError:
            raise EvaluationError("overflow", e) from None
    if isinstance(e, Func):
        a = evaluate(e.arg, x)
        if e.name == "log" and np.any(np.asarray(a) <= 0):
            raise EvaluationError("log of nonpositive value", e)
        if e.name == "sqrt" and np.any(np.asarray(a) < 0):
            raise EvaluationError("sqrt of negative value", e)
        with np.errstate(over="ignore", invalid="ignore"):
            return _finite(getattr(np, e.name)(a), e)
    a = evaluate(e.left, x)
    b = evaluate(e.right, x)
    if e.op == "/" and np.any(np.asarray(b) == 0):
        raise EvaluationError("division by zero", e)
    with np.errstate(over="ignore", invalid="ignore"):
        if e.op == "+":
            return _finite(a + b, e)
        if e.op == "-":
            return _finite(a - b, e)
        if e.op == "*":
            return _finite(a * b, e)
        return _finite(a / b, e)


def _finite(v, e: Expr):
    if not np.all(np.isfinite(v)):
        raise EvaluationError("overflow", e)
    return v


# ---------------------------------------------------------- differentiation


def derivative(e: Expr, i: int) -> Expr:
    """Symbolic partial derivative with respect to the 0-based variable ``i``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == i else ZERO
    if isinstance(e, Neg):
        return neg(derivative(e.arg, i))
    if isinstance(e, Pow):
        db = derivative(e.base, i)
        if _is_const(db, 0):
            return ZERO
        return mul(mul(Const(e.exponent), power(e.base, e.exponent - 1)), db)
    if isinstance(e, Func):
        da = derivative(e.arg, i)
        if _is_const(da, 0):
            return ZERO
        a = e.arg
        if e.name == "sin":
            outer = func("cos", a)
        elif e.name == "cos":
            outer = neg(func("sin", a))
        elif e.name == "exp":
            outer = e
        elif e.name == "log":
            return div(da, a)
        else:
            return div(da, mul(Const(2), e))
        return mul(outer, da)
    da = derivative(e.left, i)
    db = derivative(e.right, i)
    if e.op == "+":
        return add(da, db)
    if e.op == "-":
        return sub(da, db)
    if e.op == "*":
        return add(mul(da, e.right), mul(e.left, db))
    # (a/b)' = a'/b - a b' / b^2
    return sub(div(da, e.right), div(mul(e.left, db), power(e.right, 2)))


# ---------------------------------------------------------- compiled bundles


def _code(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return f"x[{e.index}]"
    if isinstance(e, Neg):
        return f"(-{_code(e.arg)})"
    if isinstance(e, Pow):
        return f"({_code(e.base)}**{e.exponent})"
    if isinstance(e, Func):
        return f"{e.name}({_code(e.arg)})"
    return f"({_code(e.left)} {e.op} {_code(e.right)})"


_SCALAR_NS = {name: getattr(math, name) for name in FUNCTIONS}
_ARRAY_NS = {name: getattr(np, name) for name in FUNCTIONS}


@dataclass(frozen=True)
class DiffBundle:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray


class CompiledExpr:
    """An expression with its gradient/Hessian trees compiled to Python callables.

    The Hessian trees are built once for ``i <= j`` and mirrored, so the
    evaluated matrix is bitwise symmetric.
    """

    def __init__(self, expr: Expr, n: int):
        if max_variable_index(expr) >= n:
            raise ValueError(f"expression uses x{max_variable_index(expr) + 1} but n = {n}")
        self.expr = expr
        self.n = n
        self.grad_exprs = tuple(derivative(expr, i) for i in range(n))
        hess = [[ZERO] * n for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                hess[i][j] = derivative(self.grad_exprs[i], j)
                hess[j][i] = hess[i][j]
        self.hess_exprs = tuple(tuple(row) for row in hess)
        upper = [self.hess_exprs[i][j] for i in range(n) for j in range(i, n)]
        self._value = self._compile([expr], _SCALAR_NS)
        self._bundle = self._compile([expr, *self.grad_exprs, *upper], _SCALAR_NS)
        self._value_array = self._compile([expr], _ARRAY_NS)
        self._grad_array = self._compile(list(self.grad_exprs), _ARRAY_NS)

    @staticmethod
    def _compile(exprs: list[Expr], namespace: dict) -> Callable:
        body = ", ".join(_code(e) for e in exprs)
        return eval(f"lambda x: ({body},)", dict(namespace))  # noqa: S307 - generated from our own AST

    def _locate(self, exprs, x):
        # the compiled path raised: redo with the reference evaluator to name the subterm
        for e in exprs:
            evaluate(e, x)
        raise EvaluationError("floating point domain error", self.expr)

    def value(self, x) -> float:
        try:
            v = self._value(x)[0]
        except (ZeroDivisionError, ValueError, OverflowError):
            self._locate([self.expr], x)
        if not math.isfinite(v):
            self._locate([self.expr], x)
        return v

    def bundle(self, x) -> DiffBundle:
        n = self.n
        try:
            out = self._bundle(x)
        except (ZeroDivisionError, ValueError, OverflowError):
            self._locate([self.expr, *self.grad_exprs, *sum(self.hess_exprs, ())], x)
        if not all(math.isfinite(v) for v in out):
            self._locate([self.expr, *self.grad_exprs, *sum(self.hess_exprs, ())], x)
        grad = np.array(out[1 : n + 1], dtype=float)
        hess = np.empty((n, n))
        pos = n + 1
        for i in range(n):
            for j in range(i, n):
                hess[i, j] = hess[j, i] = out[pos]
                pos += 1
        return DiffBundle(float(out[0]), grad, hess)

    def value_grid(self, coords) -> np.ndarray:
        """Vectorized value on arrays; ``coords[i]`` is an array or scalar for x_i."""
        with np.errstate(all="raise"):
            try:
                return np.asarray(self._value_array(coords)[0], dtype=float)
            except FloatingPointError:
                self._locate([self.expr], coords)

    def gradient_grid(self, coords) -> list[np.ndarray]:
        with np.errstate(all="raise"):
            try:
                return [np.asarray(g, dtype=float) for g in self._grad_array(coords)]
            except FloatingPointError:
                self._locate(list(self.grad_exprs), coords)


@lru_cache(maxsize=512)
def compile_expr(e: Expr, n: int) -> CompiledExpr:
    return CompiledExpr(e, n)


def differentiate(e: Expr, x) -> DiffBundle:
    """Value, gradient and Hessian of ``e`` at the point ``x``."""
    x = [float(v) for v in x]
    return compile_expr(e, len(x)).bundle(x)
