"""Tiny arithmetic language for model fields f(x, t), h(x, t), G(x, t), ...

Grammar::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := primary ("^" unary)?
    primary := NUMBER | "x" | "t" | "pi" | IDENT "(" expr ")" | "(" expr ")"

``^`` binds tighter than unary minus (``-x^2`` is ``-(x^2)``) and is
right-associative; its exponent may carry a sign (``2^-1``).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
}
VARIABLES = ("x", "t")


class ExpressionError(ValueError):
    """Raised for malformed expression source."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} at offset {offset}"
        super().__init__(message)


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Pi:
    pass


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Const, Var, Pi, Neg, BinOp, Call]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            offset = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExpressionError(f"unexpected character {src[offset]!r}", offset)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, offset = self.advance()
        if text != value or kind == "end":
            raise ExpressionError(f"expected {value!r}", offset)

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Node:
        kind, text, offset = self.advance()
        if kind == "num":
            return Const(float(text))
        if kind == "name":
            if text in VARIABLES:
                return Var(text)
            if text == "pi":
                return Pi()
            if text in FUNCTIONS:
                nxt = self.peek()
                if nxt[1] != "(":
                    raise ExpressionError(f"function {text!r} takes exactly one argument", nxt[2])
                self.advance()
                arg = self.expr()
                nxt = self.peek()
                if nxt[1] == ",":
                    raise ExpressionError(f"function {text!r} takes exactly one argument", nxt[2])
                self.expect(")")
                return Call(text, arg)
            raise ExpressionError(f"unknown identifier {text!r}", offset)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            raise ExpressionError("unexpected end of input", offset)
        raise ExpressionError(f"unexpected token {text!r}", offset)


def parse_expression(src: str) -> Node:
    """Parse ``src`` into an expression tree.

    Raises:
        ExpressionError: on syntax errors (with byte offset), unknown
            identifiers, or a function applied to other than one argument.
    """
    if not src or not src.strip():
        raise ExpressionError("empty expression", 0)
    if "," in src:
        raise ExpressionError("functions take exactly one argument", src.index(","))
    parser = _Parser(src)
    node = parser.expr()
    kind, text, offset = parser.peek()
    if kind != "end":
        raise ExpressionError(f"unexpected token {text!r}", offset)
    return node


def eval_expression(node: Node, x, t):
    """Evaluate ``node`` at ``(x, t)``; scalars or broadcastable arrays.

    Division by zero and domain errors give inf/nan instead of raising.
    """
    with np.errstate(all="ignore"):
        return _eval(node, x, t)


def _eval(node, x, t):
    if isinstance(node, Const):
        return np.float64(node.value)
    if isinstance(node, Var):
        return np.asarray(x, dtype=float) if node.name == "x" else np.asarray(t, dtype=float)
    if isinstance(node, Pi):
        return np.float64(math.pi)
    if isinstance(node, Neg):
        return -_eval(node.operand, x, t)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](_eval(node.arg, x, t))
    a = _eval(node.left, x, t)
    b = _eval(node.right, x, t)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return np.true_divide(a, b)
    return np.power(a, b)


def depends_on(node: Node, name: str) -> bool:
    """True if the variable ``name`` occurs anywhere in ``node``."""
    if isinstance(node, Var):
        return node.name == name
    if isinstance(node, Neg):
        return depends_on(node.operand, name)
    if isinstance(node, Call):
        return depends_on(node.arg, name)
    if isinstance(node, BinOp):
        return depends_on(node.left, name) or depends_on(node.right, name)
    return False


def to_source(node: Node) -> str:
    """Canonical fully parenthesized text; parses back to the same tree."""
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Pi):
        return "pi"
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
