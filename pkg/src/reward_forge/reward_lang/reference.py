"""Scalar reference evaluator.

Walks the tree once per environment using plain floats and nested lists, with
IEEE-754 results (infinities and NaNs) where the ``math`` module would raise.
It shares no numeric code with the batched interpreter and exists to check it.
"""

from __future__ import annotations

import math

from .interp import EvalFault
from .nodes import BinOp, Call, Compare, Name, Neg, Num, RewardProgram

INF = math.inf
NAN = math.nan


def _div(a: float, b: float) -> float:
    if b == 0.0:
        if a == 0.0 or math.isnan(a):
            return NAN
        return math.copysign(INF, a) * math.copysign(1.0, b)
    return a / b


def _pow(a: float, b: float) -> float:
    try:
        return math.pow(a, b)
    except OverflowError:
        odd = b == int(b) and int(b) % 2 == 1
        return -INF if (a < 0 and odd) else INF
    except ValueError:
        if a == 0.0 and b < 0:
            odd = b == int(b) and int(b) % 2 == 1
            return math.copysign(INF, a) if odd else INF
        return NAN


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return INF


def _log(x: float) -> float:
    if math.isnan(x) or x < 0:
        return NAN
    if x == 0:
        return -INF
    return math.log(x)


def _sqrt(x: float) -> float:
    return NAN if (math.isnan(x) or x < 0) else math.sqrt(x)


def _domain(f):
    def g(x: float) -> float:
        try:
            return f(x)
        except ValueError:
            return NAN
    return g


def _mn(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return NAN
    return a if a <= b else b


def _mx(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return NAN
    return a if a >= b else b


def _lt(a, b):
    return 1.0 if a < b else 0.0


def _le(a, b):
    return 1.0 if a <= b else 0.0


def _gt(a, b):
    return 1.0 if a > b else 0.0


def _ge(a, b):
    return 1.0 if a >= b else 0.0


def _eq(a, b):
    return 1.0 if a == b else 0.0


_SCALAR_UNARY = {
    "exp": _exp, "log": _log, "tanh": math.tanh, "abs": abs, "sqrt": _sqrt,
    "sin": _domain(math.sin), "cos": _domain(math.cos),
    "asin": _domain(math.asin), "acos": _domain(math.acos),
}

_SCALAR_BINARY = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "^": _pow,
    "<": _lt, "<=": _le, ">": _gt, ">=": _ge, "==": _eq,
}


def _map(f, *xs):
    """Apply ``f`` elementwise, repeating any plain float against lists."""
    lists = [x for x in xs if isinstance(x, list)]
    if not lists:
        return f(*xs)
    n = len(lists[0])
    return [_map(f, *(x[i] if isinstance(x, list) else x for x in xs)) for i in range(n)]


def _norm(v):
    acc = 0.0
    for c in v:
        acc += c * c
    return _sqrt(acc)


def _sum(v):
    acc = 0.0
    for c in v:
        acc += c
    return acc


def _mean(v):
    return _sum(v) / len(v)


def _last(f, x):
    """Apply ``f`` to every innermost list."""
    if isinstance(x[0], list):
        return [_last(f, row) for row in x]
    return f(x)


def _qmul(a, b):
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    q = [
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ]
    n = _norm(q)
    return [_div(c, n) for c in q]


def _qconj(q):
    return [-q[0], -q[1], -q[2], q[3]]


def _qrotate(q, v):
    # v' = v + 2w (u x v) + 2 u x (u x v)
    ux, uy, uz, w = q
    vx, vy, vz = v
    cx, cy, cz = uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx
    dx, dy, dz = uy * cz - uz * cy, uz * cx - ux * cz, ux * cy - uy * cx
    return [vx + 2 * (w * cx + dx), vy + 2 * (w * cy + dy), vz + 2 * (w * cz + dz)]


def _euler(q):
    x, y, z, w = q
    roll = math.atan2(2.0 * (w * x + y * z), w * w - x * x - y * y + z * z)
    sinp = 2.0 * (w * y - z * x)
    if math.isnan(sinp):
        pitch = NAN
    elif abs(sinp) >= 1.0:
        pitch = math.copysign(math.pi / 2.0, sinp)
    else:
        pitch = math.asin(sinp)
    yaw = math.atan2(2.0 * (w * z + x * y), w * w + x * x - y * y - z * z)
    two_pi = 2.0 * math.pi
    return [a % two_pi if math.isfinite(a) else NAN for a in (roll, pitch, yaw)]


def _lgsk(x, s, eps):
    return _div(1.0, _exp(s * x) + eps + _exp(-(s * x)))


class _RowEvaluator:
    def __init__(self, row: dict):
        self.row = row
        self.env: dict = {}

    def eval(self, node):
        if isinstance(node, Num):
            return float(node.value)
        if isinstance(node, Name):
            if node.id == "pi":
                return math.pi
            if node.id in self.env:
                return self.env[node.id]
            return self.row[node.id]
        if isinstance(node, Neg):
            return _map(lambda a: -a, self.eval(node.operand))
        if isinstance(node, (BinOp, Compare)):
            return _map(_SCALAR_BINARY[node.op], self.eval(node.left), self.eval(node.right))
        if isinstance(node, Call):
            return self.call(node.func, node.args)
        raise TypeError(f"not an expression node: {node!r}")

    def call(self, f, args):
        if f in _SCALAR_UNARY:
            return _map(_SCALAR_UNARY[f], self.eval(args[0]))
        x = self.eval(args[0])
        if f == "slice":
            lo, hi = int(args[1].value), int(args[2].value)
            return _last(lambda v: list(v[lo:hi]), x)
        if f == "at":
            i = int(args[1].value)
            return _last(lambda v: v[i], x)
        rest = [self.eval(a) for a in args[1:]]
        if f == "clamp":
            return _map(lambda a, lo, hi: _mn(_mx(a, lo), hi), x, *rest)
        if f == "where":
            return _map(lambda m, a, b: a if m != 0.0 else b, x, *rest)
        if f == "lgsk":
            return _map(_lgsk, x, *rest)
        if f == "min":
            return _map(_mn, x, rest[0])
        if f == "max":
            return _map(_mx, x, rest[0])
        if f == "norm":
            return _last(_norm, x)
        if f == "sum":
            return _last(_sum, x)
        if f == "mean":
            return _last(_mean, x)
        if f == "quat_mul":
            return _qmul(x, rest[0])
        if f == "quat_conj":
            return _qconj(x)
        if f == "quat_rotate":
            return _qrotate(x, rest[0])
        if f == "euler_xyz":
            return _euler(x)
        raise ValueError(f"unknown function {f}")


def evaluate_row(program: RewardProgram, row: dict) -> tuple[float, dict[str, float]]:
    """Evaluate one environment's observations given as floats / nested lists."""
    ev = _RowEvaluator(row)
    outputs = set(program.components) | {"total"}
    results = {}
    for b in program.bindings:
        value = ev.eval(b.expr)
        ev.env[b.name] = value
        if b.name in outputs:
            if not math.isfinite(value):
                raise EvalFault(b.name)
            results[b.name] = value
    total = results.pop("total")
    return total, {name: results[name] for name in program.components}
