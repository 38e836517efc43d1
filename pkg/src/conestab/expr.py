"""A small arithmetic language for state-dependent coefficients.

Grammar::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | primary
    primary := NUMBER | VAR | FUNC "(" expr ("," expr)* ")" | "(" expr ")"

``VAR`` is ``x0 .. x{k-1}``; ``FUNC`` is one of ``min``, ``max`` (two or
more arguments), ``exp``, ``tanh`` (one argument). Evaluation is plain
64-bit float arithmetic in tree order; division by zero and overflow raise
:class:`ExprEvalError`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence, Union


class ExprError(ValueError):
    def __init__(self, message: str, pos: int | None = None, text: str | None = None):
        self.pos = pos
        self.text = text
        where = "" if pos is None else f" at position {pos}"
        super().__init__(f"{message}{where}")


class ExprLexError(ExprError):
    pass


class ExprSyntaxError(ExprError):
    pass


class ExprNameError(ExprError):
    pass


class ExprEvalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Union[Num, Var, Neg, BinOp, Call]

FUNCTIONS = {"min": (2, None), "max": (2, None), "exp": (1, 1), "tanh": (1, 1)}

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/(),])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprLexError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, k: int):
        self.text = text
        self.k = k
        self.tokens = tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.advance()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos, self.text)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {val!r}", pos, self.text)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.primary()

    def primary(self) -> Node:
        kind, val, pos = self.advance()
        if kind == "num":
            value = float(val)
            if not math.isfinite(value):
                raise ExprLexError(f"literal {val} overflows", pos, self.text)
            return Num(value)
        if kind == "name":
            if val in FUNCTIONS:
                return self.call(val, pos)
            m = re.fullmatch(r"x(0|[1-9]\d*)", val)
            if m is None:
                raise ExprNameError(f"unknown identifier {val!r}", pos, self.text)
            idx = int(m.group(1))
            if idx >= self.k:
                raise ExprNameError(
                    f"variable {val} out of range for dimension {self.k}", pos, self.text
                )
            return Var(idx)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", pos, self.text)

    def call(self, name: str, pos: int) -> Node:
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        lo, hi = FUNCTIONS[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise ExprSyntaxError(f"{name} takes {lo}{'+' if hi is None else ''} argument(s)", pos, self.text)
        return Call(name, tuple(args))


def to_text(node: Node) -> str:
    """Canonical form: binary operations fully parenthesized, shortest
    round-trip literals."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        inner = to_text(node.arg)
        if isinstance(node.arg, (Num, Var, Call)):
            return "-" + inner
        return f"-({inner})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_text(a) for a in node.args)})"
    raise TypeError(node)


def _div(a: float, b: float) -> float:
    if b == 0.0:
        raise ExprEvalError("division by zero")
    return a / b


def _exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError:
        raise ExprEvalError(f"exp({a!r}) overflows") from None


def _compile(node: Node) -> Callable[[Sequence[float]], float]:
    if isinstance(node, Num):
        v = node.value
        return lambda x: v
    if isinstance(node, Var):
        i = node.index
        return lambda x: x[i]
    if isinstance(node, Neg):
        f = _compile(node.arg)
        return lambda x: -f(x)
    if isinstance(node, BinOp):
        a, b = _compile(node.left), _compile(node.right)
        op = node.op
        if op == "+":
            return lambda x: a(x) + b(x)
        if op == "-":
            return lambda x: a(x) - b(x)
        if op == "*":
            return lambda x: a(x) * b(x)
        return lambda x: _div(a(x), b(x))
    if isinstance(node, Call):
        fs = [_compile(arg) for arg in node.args]
        if node.name == "exp":
            f = fs[0]
            return lambda x: _exp(f(x))
        if node.name == "tanh":
            f = fs[0]
            return lambda x: math.tanh(f(x))
        red = min if node.name == "min" else max
        return lambda x: red([g(x) for g in fs])
    raise TypeError(node)


def _check_result(value: float) -> float:
    if not math.isfinite(value):
        raise ExprEvalError(f"non-finite result {value!r}")
    return value


@dataclass(frozen=True, eq=False)
class Expr:
    tree: Node
    dimension: int

    def __post_init__(self):
        object.__setattr__(self, "_fn", _compile(self.tree))

    def __call__(self, x: Sequence[float]) -> float:
        return _check_result(self._fn(x))

    evaluate = __call__

    @property
    def text(self) -> str:
        return to_text(self.tree)

    def __eq__(self, other):
        if not isinstance(other, Expr):
            return NotImplemented
        return self.tree == other.tree and self.dimension == other.dimension

    def __hash__(self):
        return hash((self.tree, self.dimension))

    def __repr__(self):
        return f"Expr({self.text!r}, k={self.dimension})"


def parse_expression(text: str, k: int) -> Expr:
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0, text)
    return Expr(_Parser(text, k).parse(), k)
