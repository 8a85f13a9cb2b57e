"""
Scalar expression language used by scenario files.

Grammar (loosest binding first):

    expression := term (("+" | "-") term)*
    term       := unary (("*" | "/") unary)*
    unary      := ("-" | "+") unary | power
    power      := atom ("^" unary)?          # right associative
    atom       := number | name | name "(" expression ("," expression)* ")"
                | "(" expression ")"

Names are the variables x, t, u and the constant pi; functions are exp, log,
sin, cos, tanh, sech, abs (one argument) and min, max (two arguments).
Evaluation is vectorised over numpy arrays.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from utils.errors import DomainError, ExpressionSyntaxError, UnknownIdentifierError

VARIABLES = ("x", "t", "u")
CONSTANTS = {"pi": float(np.pi)}
FUNCTIONS = {
    "exp": 1, "log": 1, "sin": 1, "cos": 1, "tanh": 1, "sech": 1, "abs": 1,
    "min": 2, "max": 2,
}
OPERAND_START = frozenset({"number", "identifier", "(", "-", "+"})


# ---------------------- AST ----------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: Tuple[object, ...]


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    offset: int


# ---------------------- tokenizer ----------------------

def _byte_offset(source, index):
    return len(source[:index].encode("utf-8"))


def tokenize(source):
    tokens = []
    i = 0
    n = len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            start = i
            while i < n and (source[i].isdigit() or source[i] == "."):
                i += 1
            if i < n and source[i] in "eE":
                j = i + 1
                if j < n and source[j] in "+-":
                    j += 1
                if j < n and source[j].isdigit():
                    i = j
                    while i < n and source[i].isdigit():
                        i += 1
            text = source[start:i]
            try:
                float(text)
            except ValueError:
                raise ExpressionSyntaxError(f"malformed number '{text}'",
                                            _byte_offset(source, start), (), source)
            tokens.append(Token("number", text, _byte_offset(source, start)))
            continue
        if c.isalpha() or c == "_":
            start = i
            while i < n and (source[i].isalnum() or source[i] == "_"):
                i += 1
            tokens.append(Token("identifier", source[start:i], _byte_offset(source, start)))
            continue
        if c in "+-*/^(),":
            tokens.append(Token(c, c, _byte_offset(source, i)))
            i += 1
            continue
        raise ExpressionSyntaxError(f"unexpected character '{c}'",
                                    _byte_offset(source, i), (), source)
    tokens.append(Token("end", "", _byte_offset(source, n)))
    return tokens


# ---------------------- parser ----------------------

class _Parser:
    def __init__(self, source):
        self.source = source
        self.tokens = tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def fail(self, token, expected):
        found = "end of input" if token.kind == "end" else f"'{token.text}'"
        raise ExpressionSyntaxError(f"unexpected {found}", token.offset, expected, self.source)

    def expect(self, kind):
        token = self.peek()
        if token.kind != kind:
            self.fail(token, {kind})
        return self.advance()

    def parse(self):
        node = self.expression()
        if self.peek().kind != "end":
            self.fail(self.peek(), {"+", "-", "*", "/", "^", "end"})
        return node

    def expression(self):
        node = self.term()
        while self.peek().kind in ("+", "-"):
            op = self.advance().kind
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek().kind in ("*", "/"):
            op = self.advance().kind
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind = self.peek().kind
        if kind == "-":
            self.advance()
            return Neg(self.unary())
        if kind == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().kind == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        token = self.peek()
        if token.kind == "number":
            self.advance()
            return Num(float(token.text))
        if token.kind == "(":
            self.advance()
            node = self.expression()
            self.expect(")")
            return node
        if token.kind == "identifier":
            self.advance()
            name = token.text
            if self.peek().kind == "(":
                if name not in FUNCTIONS:
                    raise UnknownIdentifierError(name, token.offset)
                self.advance()
                args = [self.expression()]
                while self.peek().kind == ",":
                    self.advance()
                    args.append(self.expression())
                closing = self.peek()
                if closing.kind != ")":
                    self.fail(closing, {",", ")"})
                self.advance()
                if len(args) != FUNCTIONS[name]:
                    raise ExpressionSyntaxError(
                        f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}",
                        token.offset, (), self.source)
                return Call(name, tuple(args))
            if name in VARIABLES:
                return Var(name)
            if name in CONSTANTS:
                return Num(CONSTANTS[name])
            raise UnknownIdentifierError(name, token.offset)
        self.fail(token, OPERAND_START)


# ---------------------- evaluation ----------------------

def _log(a):
    if np.any(a <= 0):
        raise DomainError("log of non-positive argument")
    return np.log(a)


def _div(a, b):
    if np.any(b == 0):
        raise DomainError("division by zero")
    return a / b


_UNARY = {
    "exp": np.exp,
    "log": _log,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "sech": lambda a: 1.0 / np.cosh(a),
    "abs": np.abs,
}
_BINARY_FUNCS = {"min": np.minimum, "max": np.maximum}
_OPS = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": _div,
    "^": np.power,
}


def _compile(node):
    if isinstance(node, Num):
        value = node.value
        return lambda env: value
    if isinstance(node, Var):
        name = node.name
        return lambda env: env[name]
    if isinstance(node, Neg):
        inner = _compile(node.operand)
        return lambda env: -inner(env)
    if isinstance(node, BinOp):
        left, right, op = _compile(node.left), _compile(node.right), _OPS[node.op]
        return lambda env: op(left(env), right(env))
    if isinstance(node, Call):
        args = [_compile(a) for a in node.args]
        if node.name in _UNARY:
            fn, arg = _UNARY[node.name], args[0]
            return lambda env: fn(arg(env))
        fn = _BINARY_FUNCS[node.name]
        a, b = args
        return lambda env: fn(a(env), b(env))
    raise TypeError(f"unknown node {node!r}")


def _free_variables(node):
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Neg):
        return _free_variables(node.operand)
    if isinstance(node, BinOp):
        return _free_variables(node.left) | _free_variables(node.right)
    if isinstance(node, Call):
        names = set()
        for arg in node.args:
            names |= _free_variables(arg)
        return names
    return set()


def to_source(node):
    """Fully parenthesised source text; parsing it gives an equivalent tree."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_source(a) for a in node.args)})"
    raise TypeError(f"unknown node {node!r}")


class Expression:
    """Immutable parsed expression; call it with scalars or numpy arrays."""

    __slots__ = ("source", "ast", "variables", "_fn")

    def __init__(self, source, ast):
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "ast", ast)
        object.__setattr__(self, "variables", frozenset(_free_variables(ast)))
        object.__setattr__(self, "_fn", _compile(ast))

    def __setattr__(self, name, value):
        raise AttributeError("Expression is immutable")

    def __repr__(self):
        return f"Expression({self.source!r})"

    def depends_on(self, name):
        return name in self.variables

    def __call__(self, x, t=0.0, u=0.0):
        scalar = np.ndim(x) == 0 and np.ndim(t) == 0 and np.ndim(u) == 0
        x = np.asarray(x, dtype=float)
        env = {"x": x, "t": np.asarray(t, dtype=float), "u": np.asarray(u, dtype=float)}
        with np.errstate(all="ignore"):
            value = self._fn(env)
        value = np.broadcast_to(np.asarray(value, dtype=float), np.broadcast(x, env["t"], env["u"]).shape)
        if not np.all(np.isfinite(value)):
            raise DomainError(f"non-finite value of '{self.source}'")
        return float(value) if scalar else np.array(value)

    def to_source(self):
        return to_source(self.ast)


def parse(source):
    if source is None or not str(source).strip():
        raise ExpressionSyntaxError("empty expression", 0, OPERAND_START, source or "")
    source = str(source)
    return Expression(source, _Parser(source).parse())


def evaluate(expr, x, t=0.0, u=0.0):
    """Scalar evaluation; non-finite results raise DomainError."""
    return float(expr(float(x), float(t), float(u)))


def constant(value):
    return parse(repr(float(value)))
