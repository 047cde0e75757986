"""A small arithmetic grammar over the state variable ``n``.

Grammar (``^`` binds tighter than unary minus and is right-associative)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | "n" | FUNC "(" expr ("," expr)* ")" | "(" expr ")"
    FUNC   := sqrt | exp | log | abs | min | max | floor

Compiled formulas evaluate elementwise on numpy arrays.
"""

from __future__ import annotations

import re
from collections.abc import Callable

import numpy as np

from .errors import ConfigError

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)|([A-Za-z_]\w*)|(\*\*|[-+*/^(),]))")

FUNCTIONS: dict[str, tuple[Callable, int, int]] = {
    # name: (callable, min args, max args)
    "sqrt": (np.sqrt, 1, 1),
    "exp": (np.exp, 1, 1),
    "log": (np.log, 1, 1),
    "abs": (np.abs, 1, 1),
    "floor": (np.floor, 1, 1),
    "min": (lambda *a: np.minimum.reduce(np.broadcast_arrays(*a)), 2, 16),
    "max": (lambda *a: np.maximum.reduce(np.broadcast_arrays(*a)), 2, 16),
}


def _tokenize(text: str, field: str | None):
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            rest = text[pos:]
            col = pos + len(rest) - len(rest.lstrip()) + 1
            raise ConfigError(f"unexpected character {rest.strip()[:1]!r} at column {col}", field)
        num, name, op = m.groups()
        col = m.start() + len(m.group(0)) - len(m.group(0).lstrip()) + 1
        if num is not None:
            tokens.append(("num", float(num), col))
        elif name is not None:
            tokens.append(("name", name, col))
        else:
            tokens.append(("op", "^" if op == "**" else op, col))
        pos = m.end()
    tokens.append(("end", None, len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, field: str | None):
        self.text = text
        self.field = field
        self.tokens = _tokenize(text, field)
        self.i = 0

    def error(self, msg):
        col = self.tokens[self.i][2]
        raise ConfigError(f"{msg} at column {col} in {self.text!r}", self.field)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def accept(self, op):
        kind, val, _ = self.peek()
        if kind == "op" and val == op:
            self.i += 1
            return True
        return False

    def expect(self, op):
        if not self.accept(op):
            self.error(f"expected {op!r}")

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.error("unexpected token")
        return node

    def expr(self):
        node = self.term()
        while True:
            if self.accept("+"):
                node = ("+", node, self.term())
            elif self.accept("-"):
                node = ("-", node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            if self.accept("*"):
                node = ("*", node, self.unary())
            elif self.accept("/"):
                node = ("/", node, self.unary())
            else:
                return node

    def unary(self):
        if self.accept("-"):
            return ("neg", self.unary())
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.accept("^"):
            return ("^", base, self.unary())
        return base

    def atom(self):
        kind, val, _ = self.peek()
        if kind == "num":
            self.take()
            return ("num", val)
        if kind == "name":
            self.take()
            if val == "n":
                return ("n",)
            if val not in FUNCTIONS:
                self.i -= 1
                self.error(f"unknown name {val!r}")
            fn, lo, hi = FUNCTIONS[val]
            self.expect("(")
            args = [self.expr()]
            while self.accept(","):
                args.append(self.expr())
            self.expect(")")
            if not lo <= len(args) <= hi:
                self.error(f"{val} takes {lo}..{hi} arguments, got {len(args)}")
            return ("call", val, args)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        self.error("expected a number, 'n', a function or '('")


_BINARY = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": np.power,
}


def _eval(node, n):
    op = node[0]
    if op == "num":
        return np.full(n.shape, node[1])
    if op == "n":
        return n
    if op == "neg":
        return -_eval(node[1], n)
    if op == "call":
        return FUNCTIONS[node[1]][0](*[_eval(a, n) for a in node[2]])
    return _BINARY[op](_eval(node[1], n), _eval(node[2], n))


class Formula:
    """A compiled formula in ``n``."""

    def __init__(self, text: str, field: str | None = None):
        self.text = str(text)
        self.field = field
        self._tree = _Parser(self.text, field).parse()

    def __call__(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        with np.errstate(all="ignore"):
            return np.asarray(_eval(self._tree, n), dtype=float)

    def __repr__(self):
        return f"Formula({self.text!r})"


def parse(text: str, field: str | None = None) -> Formula:
    return Formula(text, field)
