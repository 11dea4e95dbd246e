"""Syntax tree for reward programs.

Node equality ignores source positions and literal spelling, so a program
re-parsed from its printed form compares equal to the original.
"""

from __future__ import annotations

from dataclasses import dataclass, field

#: call name -> number of arguments
FUNCTIONS = {
    "exp": 1, "log": 1, "tanh": 1, "abs": 1, "sqrt": 1,
    "sin": 1, "cos": 1, "asin": 1, "acos": 1,
    "clamp": 3, "where": 3, "lgsk": 3,
    "norm": 1, "mean": 1, "sum": 1,
    "min": 2, "max": 2,
    "slice": 3, "at": 2,
    "quat_mul": 2, "quat_conj": 1, "quat_rotate": 2, "euler_xyz": 1,
}

#: calls whose trailing arguments must be non-negative integer literals
INDEX_ARGS = {"slice": (1, 2), "at": (1,)}

CONSTANTS = {"pi"}

BINARY_OPS = ("+", "-", "*", "/", "^")
COMPARE_OPS = ("<", "<=", ">", ">=", "==")


@dataclass(frozen=True)
class Pos:
    line: int
    col: int


@dataclass(frozen=True)
class Num:
    value: float
    pos: Pos | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Name:
    id: str
    pos: Pos | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    pos: Pos | None = field(default=None, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: Pos | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Expr"
    right: "Expr"
    pos: Pos | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    pos: Pos | None = field(default=None, compare=False)


Expr = Num | Name | Neg | BinOp | Compare | Call


@dataclass(frozen=True)
class Binding:
    name: str
    expr: Expr
    pos: Pos | None = field(default=None, compare=False)


@dataclass(frozen=True)
class RewardProgram:
    bindings: tuple
    source: str = field(default="", compare=False)
    origin: str = field(default="file", compare=False)  # builtin | llm | file

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.bindings]

    @property
    def components(self) -> list[str]:
        """Bindings reported individually: everything but ``total`` and ``_``-prefixed names."""
        return [n for n in self.names if n != "total" and not n.startswith("_")]

    def binding(self, name: str) -> Binding:
        for b in self.bindings:
            if b.name == name:
                return b
        raise KeyError(name)

    def observations(self) -> set[str]:
        """Free identifiers: names read from the observation batch."""
        bound = set(self.names)
        return {n for n in identifiers(self) if n not in bound and n not in CONSTANTS}


def children(node) -> tuple:
    if isinstance(node, Neg):
        return (node.operand,)
    if isinstance(node, (BinOp, Compare)):
        return (node.left, node.right)
    if isinstance(node, Call):
        return node.args
    return ()


def walk(node):
    """Pre-order traversal of an expression."""
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(children(n)))


def identifiers(program: RewardProgram) -> list[str]:
    out = []
    for b in program.bindings:
        out.extend(n.id for n in walk(b.expr) if isinstance(n, Name))
    return out
