"""Static per-env shape inference for reward programs.

Shapes are tuples of trailing dimensions: ``()`` is a scalar per env,
``(d,)`` a vector and ``(k, d)`` a matrix. Elementwise operations accept
equal shapes, or a scalar paired with anything.
"""

from __future__ import annotations

from .nodes import BinOp, Call, Compare, CONSTANTS, Name, Neg, Num, RewardProgram


class ShapeError(ValueError):
    def __init__(self, message: str, binding: str | None = None):
        super().__init__(f"{binding}: {message}" if binding else message)
        self.message = message
        self.binding = binding


def describe(shape: tuple) -> str:
    if shape == ():
        return "Scalar"
    if len(shape) == 1:
        return f"Vec({shape[0]})"
    return f"Mat({', '.join(map(str, shape))})"


def _broadcast(a: tuple, b: tuple, what: str) -> tuple:
    if a == b or b == ():
        return a
    if a == ():
        return b
    raise ShapeError(f"shape mismatch in {what}: {describe(a)} vs {describe(b)}")


def _require_rank(shape: tuple, what: str, allowed=(1, 2)) -> None:
    if len(shape) not in allowed:
        raise ShapeError(f"{what} expects a vector or matrix, got {describe(shape)}")


def _quat(shape: tuple, what: str) -> None:
    if shape != (4,):
        raise ShapeError(f"{what} expects a quaternion Vec(4), got {describe(shape)}")


def infer(node, env: dict) -> tuple:
    """Shape of ``node`` given shapes of the names it may reference."""
    if isinstance(node, Num):
        return ()
    if isinstance(node, Name):
        if node.id in CONSTANTS:
            return ()
        if node.id not in env:
            raise ShapeError(f"unresolved identifier {node.id}")
        return env[node.id]
    if isinstance(node, Neg):
        return infer(node.operand, env)
    if isinstance(node, (BinOp, Compare)):
        return _broadcast(infer(node.left, env), infer(node.right, env), f"'{node.op}'")
    if isinstance(node, Call):
        return _infer_call(node, [infer(a, env) for a in node.args])
    raise TypeError(f"not an expression node: {node!r}")


def _infer_call(node: Call, shapes: list) -> tuple:
    f = node.func
    if f in ("exp", "log", "tanh", "abs", "sqrt", "sin", "cos", "asin", "acos"):
        return shapes[0]
    if f in ("clamp", "where", "lgsk"):
        out = shapes[0]
        for s in shapes[1:]:
            out = _broadcast(out, s, f)
        if f == "lgsk" and (shapes[1] != () or shapes[2] != ()):
            raise ShapeError("lgsk scale and eps must be scalars")
        return out
    if f in ("min", "max"):
        return _broadcast(shapes[0], shapes[1], f)
    if f in ("norm", "mean", "sum"):
        _require_rank(shapes[0], f)
        return shapes[0][:-1]
    if f == "slice":
        _require_rank(shapes[0], f)
        lo, hi = int(node.args[1].value), int(node.args[2].value)
        if not lo < hi <= shapes[0][-1]:
            raise ShapeError(f"slice bounds [{lo}, {hi}) outside last axis of size {shapes[0][-1]}")
        return shapes[0][:-1] + (hi - lo,)
    if f == "at":
        _require_rank(shapes[0], f)
        i = int(node.args[1].value)
        if i >= shapes[0][-1]:
            raise ShapeError(f"index {i} outside last axis of size {shapes[0][-1]}")
        return shapes[0][:-1]
    if f == "quat_mul":
        _quat(shapes[0], f)
        _quat(shapes[1], f)
        return (4,)
    if f == "quat_conj":
        _quat(shapes[0], f)
        return (4,)
    if f == "quat_rotate":
        _quat(shapes[0], f)
        if shapes[1] != (3,):
            raise ShapeError(f"quat_rotate expects a Vec(3) to rotate, got {describe(shapes[1])}")
        return (3,)
    if f == "euler_xyz":
        _quat(shapes[0], f)
        return (3,)
    raise ShapeError(f"unknown function {f}")


def check(program: RewardProgram, roster: dict) -> dict:
    """Assign a shape to every binding; ``total`` and all components must be scalar.

    ``roster`` maps observation names to per-env shapes. Names outside it are
    rejected, which is how a prompt's restricted signature is enforced.
    """
    env = dict(roster)
    table: dict[str, tuple] = {}
    components = set(program.components)
    for b in program.bindings:
        try:
            shape = infer(b.expr, env)
        except ShapeError as e:
            raise ShapeError(e.message, b.name) from None
        if b.name == "total" and shape != ():
            raise ShapeError(f"total must be scalar, got {describe(shape)}", b.name)
        if b.name in components and shape != ():
            raise ShapeError(f"component must be scalar, got {describe(shape)}", b.name)
        env[b.name] = shape
        table[b.name] = shape
    return table
