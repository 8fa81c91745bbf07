"""Closed-form expression mini-language for problem data.

Problem definitions carry their data maps as infix expression strings.  The
grammar is small on purpose: it is the exchange format for problem files and
must stay readable and round-trippable.

::

    expr   := term  (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("+" | "-") unary | power
    power  := atom ("^" unary)?          right associative
    atom   := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

Functions: ``sin``, ``cos``, ``exp``, ``abs`` (one argument) and ``min``,
``max`` (two arguments).  The constant ``pi`` is predefined.  Which variable
names are in scope depends on the role of the expression: data maps over the
space-time cylinder see ``x1`` (plus ``x2`` in two dimensions), ``t``, ``y``
and ``u``; nonlinearities see only ``y``; initial data and diffusion
coefficients see only the spatial variables.

Compiled expressions evaluate with numpy semantics, so any argument may be a
scalar or an array and broadcasting applies.  The original source text is
kept on the compiled object; serializing a compiled expression reproduces
that text verbatim, which is what makes problem files round-trip exactly.
"""

from __future__ import annotations

import re

import numpy as np

from .exceptions import GrammarError

__all__ = ["ExprFunc", "parse_expression", "SPACE_TIME_VARS"]

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\^|\*|/|\+|-|\(|\)|,)"
    r")"
)

_UNARY_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs}
_BINARY_FUNCS = {"min": np.minimum, "max": np.maximum}
_CONSTANTS = {"pi": np.pi}


def SPACE_TIME_VARS(dim: int) -> tuple:
    """Variable names legal in a space-time data map of the given dimension."""
    if dim == 1:
        return ("x1", "t", "y", "u")
    return ("x1", "x2", "t", "y", "u")


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            tail = source[pos:].strip()
            if not tail:
                break
            raise GrammarError(
                f"unrecognized input at position {pos}: {tail[:12]!r}"
            )
        pos = m.end()
        if m.lastgroup == "num":
            tokens.append(("num", float(m.group("num"))))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name")))
        else:
            tokens.append(("op", m.group("op")))
    tokens.append(("end", ""))
    return tokens


class _Parser:
    def __init__(self, tokens, allowed, source):
        self.tokens = tokens
        self.k = 0
        self.allowed = frozenset(allowed)
        self.source = source

    def peek(self):
        return self.tokens[self.k]

    def take(self):
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def expect_op(self, op):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise GrammarError(f"expected {op!r} in {self.source!r}, found {val!r}")

    def parse(self):
        node = self.expr()
        kind, val = self.peek()
        if kind != "end":
            raise GrammarError(f"trailing input {val!r} in {self.source!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.take()
            node = ("bin", op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            _, op = self.take()
            node = ("bin", op, node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            return ("neg", self.unary())
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return ("bin", "^", base, self.unary())
        return base

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return ("num", val)
        if kind == "name":
            if self.peek() == ("op", "("):
                return self.call(val)
            if val in _CONSTANTS:
                return ("num", _CONSTANTS[val])
            if val not in self.allowed:
                raise GrammarError(
                    f"name {val!r} is not in scope here (allowed: "
                    f"{', '.join(sorted(self.allowed))}) in {self.source!r}"
                )
            return ("var", val)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise GrammarError(f"unexpected token {val!r} in {self.source!r}")

    def call(self, fname):
        self.expect_op("(")
        args = [self.expr()]
        while self.peek() == ("op", ","):
            self.take()
            args.append(self.expr())
        self.expect_op(")")
        if fname in _UNARY_FUNCS:
            if len(args) != 1:
                raise GrammarError(f"{fname} takes one argument in {self.source!r}")
            return ("call1", fname, args[0])
        if fname in _BINARY_FUNCS:
            if len(args) != 2:
                raise GrammarError(f"{fname} takes two arguments in {self.source!r}")
            return ("call2", fname, args[0], args[1])
        raise GrammarError(f"unknown function {fname!r} in {self.source!r}")


def _free_vars(node, out):
    tag = node[0]
    if tag == "var":
        out.add(node[1])
    elif tag == "neg":
        _free_vars(node[1], out)
    elif tag == "bin":
        _free_vars(node[2], out)
        _free_vars(node[3], out)
    elif tag == "call1":
        _free_vars(node[2], out)
    elif tag == "call2":
        _free_vars(node[2], out)
        _free_vars(node[3], out)


def _compile(node):
    tag = node[0]
    if tag == "num":
        v = node[1]
        return lambda env: v
    if tag == "var":
        n = node[1]
        return lambda env: env[n]
    if tag == "neg":
        a = _compile(node[1])
        return lambda env: -a(env)
    if tag == "bin":
        op = node[1]
        a = _compile(node[2])
        b = _compile(node[3])
        if op == "+":
            return lambda env: a(env) + b(env)
        if op == "-":
            return lambda env: a(env) - b(env)
        if op == "*":
            return lambda env: a(env) * b(env)
        if op == "/":
            return lambda env: a(env) / b(env)
        return lambda env: a(env) ** b(env)
    if tag == "call1":
        fn = _UNARY_FUNCS[node[1]]
        a = _compile(node[2])
        return lambda env: fn(a(env))
    fn = _BINARY_FUNCS[node[1]]
    a = _compile(node[2])
    b = _compile(node[3])
    return lambda env: fn(a(env), b(env))


class ExprFunc:
    """A compiled expression.

    Call with keyword arguments naming the variables, e.g.
    ``f(x1=xs, t=0.5, y=ys, u=us)``.  Extra keywords are ignored, missing
    ones raise ``KeyError`` only if the expression actually references them.
    """

    __slots__ = ("source", "variables", "_fn")

    def __init__(self, source: str, variables: frozenset, fn):
        self.source = source
        self.variables = variables
        self._fn = fn

    def __call__(self, **env):
        return self._fn(env)

    def __repr__(self):
        return f"ExprFunc({self.source!r})"


def parse_expression(source: str, allowed, name: str = "expression") -> ExprFunc:
    """Compile ``source`` against the variable scope ``allowed``.

    Raises :class:`GrammarError` on malformed input or out-of-scope names.
    ``name`` is used only to improve error messages.
    """
    if not isinstance(source, str) or not source.strip():
        raise GrammarError(f"{name}: empty expression")
    try:
        tokens = _tokenize(source)
        node = _Parser(tokens, allowed, source).parse()
    except GrammarError as err:
        raise GrammarError(f"{name}: {err}") from None
    used = set()
    _free_vars(node, used)
    return ExprFunc(source.strip(), frozenset(used), _compile(node))
