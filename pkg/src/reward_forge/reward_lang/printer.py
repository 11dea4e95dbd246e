"""Canonical text form of a reward program.

The printer emits the fewest parentheses the grammar needs, so that
``parse(to_source(p)) == p`` for every program ``p``.
"""

from __future__ import annotations

from .nodes import BinOp, Call, Compare, Name, Neg, Num, RewardProgram

# binding strength of each production; atoms bind tightest
_ADD, _MUL, _UNARY, _POW, _ATOM = 1, 2, 3, 4, 5
_PREC = {"+": _ADD, "-": _ADD, "*": _MUL, "/": _MUL, "^": _POW}


def format_number(value: float) -> str:
    return repr(float(value))


def _prec(node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _UNARY
    return _ATOM


def _wrap(node, minimum: int) -> str:
    text = to_expr(node)
    return f"({text})" if _prec(node) < minimum else text


def to_expr(node) -> str:
    if isinstance(node, Num):
        return format_number(node.value)
    if isinstance(node, Name):
        return node.id
    if isinstance(node, Neg):
        return "-" + _wrap(node.operand, _UNARY)
    if isinstance(node, Compare):
        return f"({to_expr(node.left)} {node.op} {to_expr(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_expr(a) for a in node.args)})"
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        if node.op == "^":
            # base must be an atom; exponent is a unary expression
            return f"{_wrap(node.left, _ATOM)} ^ {_wrap(node.right, _UNARY)}"
        return f"{_wrap(node.left, p)} {node.op} {_wrap(node.right, p + 1)}"
    raise TypeError(f"not an expression node: {node!r}")


def to_source(program: RewardProgram) -> str:
    return "".join(f"{b.name} = {to_expr(b.expr)}\n" for b in program.bindings)
