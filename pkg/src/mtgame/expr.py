"""Arithmetic expression language for game data.

Running costs, dynamics and terminal costs are written as small expressions
over the fixed variable families ``t1..tm``, ``x1..xn``, ``u1..up`` and
``v1..vq``::

    >>> expr = parse("(x1+u1)^2 - v1^2")
    >>> evaluate(expr, {"x1": 0.5, "u1": -0.5, "v1": 0.0})
    0.0

Grammar (``^`` binds tightest and is right-associative, unary minus sits
between ``^`` and ``* /``)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" unary)?
    atom    := NUMBER | VARIABLE | FUNC "(" expr ("," expr)* ")" | "(" expr ")"

Evaluation works on floats and on numpy arrays alike, so the solver can
evaluate one expression over a whole broadcast block of states and controls.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = [
    "Binary",
    "Call",
    "EvaluationError",
    "Expression",
    "ExpressionError",
    "FUNCTIONS",
    "Num",
    "NumericDomainError",
    "ParseError",
    "Unary",
    "UnboundVariableError",
    "Var",
    "evaluate",
    "parse",
    "to_source",
    "variables",
]

VARIABLE_RE = re.compile(r"[txuv][1-9][0-9]*\Z")

# name -> arity
FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "abs": 1, "min": 2, "max": 2}


class ExpressionError(Exception):
    """Base class for expression parsing and evaluation failures."""


class ParseError(ExpressionError):
    """Malformed source text. ``offset`` is the byte offset of the failure."""

    def __init__(self, message: str, offset: int, source: str = ""):
        self.message = message
        self.offset = offset
        self.source = source
        super().__init__(f"syntax error at offset {offset}: {message}")


class EvaluationError(ExpressionError):
    pass


class UnboundVariableError(EvaluationError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unbound variable {name!r}")


class NumericDomainError(EvaluationError):
    """Evaluation produced a non-finite value (division by zero, overflow, ...)."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expression"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Expression = Union[Num, Var, Unary, Binary, Call]


# --------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num, name, op, end
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            raise ParseError(f"unexpected character {source[pos]!r}", _byte_offset(source, pos), source)
        kind = match.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, match.group(), pos))
        pos = match.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


def _byte_offset(source: str, index: int) -> int:
    return len(source[:index].encode("utf-8"))


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def error(self, message: str, token: _Token | None = None):
        token = token or self.tok
        return ParseError(message, _byte_offset(self.source, token.offset), self.source)

    def advance(self) -> _Token:
        token = self.tok
        self.pos += 1
        return token

    def expect(self, text: str) -> None:
        if self.tok.text != text or self.tok.kind != "op":
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        self.advance()

    def parse(self) -> Expression:
        node = self.expr()
        if self.tok.kind != "end":
            raise self.error(f"unexpected {self.tok.text!r}")
        return node

    def expr(self) -> Expression:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expression:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expression:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Unary("-", self.unary())
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            # right operand parsed at unary level gives right associativity
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Expression:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "name":
            self.advance()
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(tok)
            if not VARIABLE_RE.match(tok.text):
                raise self.error(f"unknown identifier {tok.text!r}", tok)
            return Var(tok.text)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = tok.text or "end of input"
        raise self.error(f"unexpected {found!r}")

    def call(self, name_tok: _Token) -> Expression:
        name = name_tok.text
        if name not in FUNCTIONS:
            raise self.error(f"unknown function {name!r}", name_tok)
        self.expect("(")
        args = [self.expr()]
        while self.tok.kind == "op" and self.tok.text == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        if len(args) != FUNCTIONS[name]:
            raise self.error(f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}", name_tok)
        return Call(name, tuple(args))


def parse(source: str) -> Expression:
    """Parse ``source`` into an expression tree.

    Raises:
        ParseError: on malformed input, unknown functions or identifiers that
            are not variables of the form ``[txuv]<index>``.
    """
    if not source or not source.strip():
        raise ParseError("empty expression", 0, source or "")
    return _Parser(source).parse()


# --------------------------------------------------------------------------
# evaluation

_UNARY_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs}


def _eval(node: Expression, bindings: Mapping[str, object]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return bindings[node.name]
        except KeyError:
            raise UnboundVariableError(node.name) from None
    if isinstance(node, Unary):
        return -_eval(node.operand, bindings)
    if isinstance(node, Binary):
        a = _eval(node.left, bindings)
        b = _eval(node.right, bindings)
        op = node.op
        if op == "+":
            return np.add(a, b)
        if op == "-":
            return np.subtract(a, b)
        if op == "*":
            return np.multiply(a, b)
        if op == "/":
            return np.true_divide(a, b)
        return np.power(np.asarray(a, dtype=float), b)
    if node.name in _UNARY_FUNCS:
        return _UNARY_FUNCS[node.name](_eval(node.args[0], bindings))
    a, b = (_eval(arg, bindings) for arg in node.args)
    return np.minimum(a, b) if node.name == "min" else np.maximum(a, b)


def evaluate(expr: Expression, bindings: Mapping[str, object]):
    """Evaluate ``expr`` under ``bindings``.

    Bound values may be floats or numpy arrays; arrays broadcast against each
    other and an array result comes back. Scalars come back as ``float``.
    ``0^0`` evaluates to 1.

    Raises:
        UnboundVariableError: a referenced variable has no binding.
        NumericDomainError: any entry of the result is NaN or infinite.
    """
    with np.errstate(all="ignore"):
        result = _eval(expr, bindings)
    result = np.asarray(result, dtype=float)
    if not np.all(np.isfinite(result)):
        raise NumericDomainError(f"non-finite value while evaluating {to_source(expr)!r}")
    if result.ndim == 0:
        return float(result)
    return result


def variables(expr: Expression) -> frozenset[str]:
    """Names of all variables referenced by ``expr``."""
    if isinstance(expr, Var):
        return frozenset([expr.name])
    if isinstance(expr, Num):
        return frozenset()
    if isinstance(expr, Unary):
        return variables(expr.operand)
    if isinstance(expr, Binary):
        return variables(expr.left) | variables(expr.right)
    out = frozenset()
    for arg in expr.args:
        out |= variables(arg)
    return out


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_UNARY_PREC = 3


def _prec(node: Expression) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary):
        return _UNARY_PREC
    if isinstance(node, Num) and (node.value < 0 or math.copysign(1.0, node.value) < 0):
        return _UNARY_PREC
    return 5


def _fmt_num(value: float) -> str:
    if value == int(value) and abs(value) < 1e16:
        return str(int(value)) if value != 0 or math.copysign(1.0, value) > 0 else "-0"
    return repr(value)


def to_source(expr: Expression) -> str:
    """Render ``expr`` back to source text that re-parses to an equal tree."""
    if isinstance(expr, Num):
        if math.isinf(expr.value) or math.isnan(expr.value):
            raise ValueError(f"cannot render non-finite literal {expr.value}")
        if expr.value < 0 or math.copysign(1.0, expr.value) < 0:
            return "-" + _fmt_num(-expr.value)
        return _fmt_num(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Call):
        return f"{expr.name}({', '.join(to_source(a) for a in expr.args)})"
    if isinstance(expr, Unary):
        inner = to_source(expr.operand)
        if _prec(expr.operand) < _UNARY_PREC:
            inner = f"({inner})"
        return f"-{inner}"
    prec = _PREC[expr.op]
    left = to_source(expr.left)
    right = to_source(expr.right)
    if expr.op == "^":
        # the base must be an atom; the exponent may be unary or another power
        if _prec(expr.left) <= prec:
            left = f"({left})"
        if _prec(expr.right) < _UNARY_PREC:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(expr.left) < prec:
        left = f"({left})"
    # left-associative: equal precedence on the right needs parentheses
    if _prec(expr.right) <= prec:
        right = f"({right})"
    return f"{left} {expr.op} {right}"
