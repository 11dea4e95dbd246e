"""Tokenizer and recursive-descent parser for reward programs.

Grammar::

    program  := { binding NEWLINE }
    binding  := IDENT "=" expr
    expr     := term { ("+" | "-") term }
    term     := unary { ("*" | "/") unary }
    unary    := "-" unary | power
    power    := base [ "^" unary ]
    base     := NUMBER | IDENT | call | "(" expr [ CMP expr ] ")"
    call     := FUNC "(" expr { "," expr } ")"

``CMP`` is one of ``< <= > >= ==``; a lone ``=`` inside parentheses is read
as ``==``. Newlines inside parentheses are ignored and ``#`` starts a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..env import roster
from .nodes import (BinOp, Binding, Call, Compare, CONSTANTS, FUNCTIONS, INDEX_ARGS, Name, Neg,
                    Num, Pos, RewardProgram, walk)


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {message}" if line else message)
        self.message = message
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str  # NUM, IDENT, OP, CMP, NEWLINE, EOF
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<cmp><=|>=|==|<|>)
  | (?P<op>[-+*/^(),=])
    """,
    re.VERBOSE,
)


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start, depth, i = 1, 0, 0, 0
    while i < len(source):
        m = _TOKEN_RE.match(source, i)
        col = i - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {source[i]!r}", line, col)
        kind, text = m.lastgroup, m.group()
        i = m.end()
        if kind == "newline":
            if depth == 0 and tokens and tokens[-1].kind != "NEWLINE":
                tokens.append(Token("NEWLINE", "\n", line, col))
            line += 1
            line_start = i
            continue
        if kind in ("ws", "comment"):
            continue
        if text == "(":
            depth += 1
        elif text == ")":
            depth = max(depth - 1, 0)
        tokens.append(Token({"num": "NUM", "ident": "IDENT", "cmp": "CMP", "op": "OP"}[kind], text, line, col))
    if tokens and tokens[-1].kind != "NEWLINE":
        tokens.append(Token("NEWLINE", "\n", line, i - line_start + 1))
    tokens.append(Token("EOF", "", line, i - line_start + 1))
    return tokens


_ROSTER = frozenset(roster())


def default_names() -> frozenset:
    return _ROSTER


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col)

    def expect(self, text: str) -> Token:
        if self.tok.text != text:
            found = "end of input" if self.tok.kind == "EOF" else repr(self.tok.text.strip() or "newline")
            raise self.error(f"expected {text!r}, found {found}")
        return self.advance()

    def program(self) -> list[Binding]:
        bindings = []
        while self.tok.kind != "EOF":
            bindings.append(self.binding())
            if self.tok.kind != "NEWLINE":
                raise self.error(f"expected end of line, found {self.tok.text!r}")
            self.advance()
        return bindings

    def binding(self) -> Binding:
        tok = self.tok
        if tok.kind != "IDENT":
            raise self.error(f"expected a binding name, found {tok.text.strip() or 'newline'!r}")
        self.advance()
        self.expect("=")
        return Binding(tok.text, self.expr(), Pos(tok.line, tok.col))

    def expr(self):
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance()
            node = BinOp(op.text, node, self.term(), Pos(op.line, op.col))
        return node

    def term(self):
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.advance()
            node = BinOp(op.text, node, self.unary(), Pos(op.line, op.col))
        return node

    def unary(self):
        if self.tok.text == "-":
            op = self.advance()
            return Neg(self.unary(), Pos(op.line, op.col))
        return self.power()

    def power(self):
        node = self.base()
        if self.tok.text == "^":
            op = self.advance()
            node = BinOp("^", node, self.unary(), Pos(op.line, op.col))
        return node

    def base(self):
        tok = self.tok
        pos = Pos(tok.line, tok.col)
        if tok.kind == "NUM":
            self.advance()
            return Num(float(tok.text), pos)
        if tok.kind == "IDENT":
            self.advance()
            if self.tok.text == "(":
                return self.call(tok, pos)
            return Name(tok.text, pos)
        if tok.text == "(":
            self.advance()
            left = self.expr()
            if self.tok.kind == "CMP" or self.tok.text == "=":
                op = self.advance()
                right = self.expr()
                self.expect(")")
                return Compare("==" if op.text == "=" else op.text, left, right, pos)
            self.expect(")")
            return left
        found = "end of input" if tok.kind == "EOF" else repr(tok.text.strip() or "newline")
        raise self.error(f"expected an expression, found {found}")

    def call(self, name: Token, pos: Pos):
        if name.text not in FUNCTIONS:
            raise self.error(f"unknown function {name.text}", name)
        self.expect("(")
        args = [self.expr()]
        while self.tok.text == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        arity = FUNCTIONS[name.text]
        if len(args) != arity:
            raise self.error(f"{name.text} takes {arity} argument(s), got {len(args)}", name)
        for k in INDEX_ARGS.get(name.text, ()):
            a = args[k]
            if not (isinstance(a, Num) and a.value >= 0 and a.value == int(a.value)):
                raise self.error(f"{name.text} index arguments must be non-negative integer literals", name)
        return Call(name.text, tuple(args), pos)


def parse(source: str, names=None, origin: str = "file") -> RewardProgram:
    """Parse reward-program text.

    ``names`` is the set of observation names identifiers may refer to
    besides earlier bindings; it defaults to the full environment roster.
    """
    known = default_names() if names is None else frozenset(names)
    bindings = _Parser(tokenize(source)).program()
    seen: set[str] = set()
    for b in bindings:
        line, col = (b.pos.line, b.pos.col) if b.pos else (0, 0)
        if b.name in seen:
            raise ParseError(f"duplicate binding {b.name}", line, col)
        if b.name in known or b.name in _ROSTER or b.name in CONSTANTS or b.name in FUNCTIONS:
            raise ParseError(f"binding {b.name} shadows a built-in name", line, col)
        for node in (n for n in walk(b.expr) if isinstance(n, Name)):
            if node.id not in seen and node.id not in known and node.id not in CONSTANTS:
                p = node.pos or Pos(line, col)
                raise ParseError(f"unresolved identifier {node.id}", p.line, p.col)
        seen.add(b.name)
    if "total" not in seen:
        raise ParseError("missing binding for total")
    return RewardProgram(tuple(bindings), source=source, origin=origin)

