"""Batched numpy evaluation of reward programs."""

from __future__ import annotations

import math

import numpy as np

from .. import geom
from .nodes import BinOp, Call, Compare, Name, Neg, Num, RewardProgram


class EvalFault(ArithmeticError):
    """A reward output became NaN or infinite."""

    def __init__(self, binding: str, message: str = "non-finite value"):
        super().__init__(f"{binding}: {message}")
        self.binding = binding


def _align(*values):
    """Give per-env scalars trailing unit axes so they broadcast against vectors."""
    rank = max(np.ndim(v) for v in values)
    out = []
    for v in values:
        nd = np.ndim(v)
        if 0 < nd < rank:
            v = np.reshape(v, np.shape(v) + (1,) * (rank - nd))
        out.append(v)
    return out


_UNARY = {
    "exp": np.exp, "log": np.log, "tanh": np.tanh, "abs": np.abs, "sqrt": np.sqrt,
    "sin": np.sin, "cos": np.cos, "asin": np.arcsin, "acos": np.arccos,
}

_BINARY = {
    "+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide, "^": np.power,
    "<": np.less, "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal, "==": np.equal,
}


class _Evaluator:
    def __init__(self, obs):
        self.obs = obs
        self.env: dict = {}

    def eval(self, node):
        if isinstance(node, Num):
            return np.float64(node.value)
        if isinstance(node, Name):
            if node.id == "pi":
                return np.float64(math.pi)
            if node.id in self.env:
                return self.env[node.id]
            return self.obs[node.id]
        if isinstance(node, Neg):
            return -self.eval(node.operand)
        if isinstance(node, BinOp):
            a, b = _align(self.eval(node.left), self.eval(node.right))
            return _BINARY[node.op](a, b)
        if isinstance(node, Compare):
            a, b = _align(self.eval(node.left), self.eval(node.right))
            return _BINARY[node.op](a, b).astype(np.float64)
        if isinstance(node, Call):
            return self.call(node.func, node.args)
        raise TypeError(f"not an expression node: {node!r}")

    def call(self, f, args):
        if f in _UNARY:
            return _UNARY[f](self.eval(args[0]))
        if f in ("slice", "at"):
            x = self.eval(args[0])
            lo = int(args[1].value)
            return x[..., lo:int(args[2].value)] if f == "slice" else x[..., lo]
        vals = [self.eval(a) for a in args]
        if f == "clamp":
            x, lo, hi = _align(*vals)
            return np.minimum(np.maximum(x, lo), hi)
        if f == "where":
            m, a, b = _align(*vals)
            return np.where(m != 0, a, b)
        if f == "lgsk":
            x, s, eps = vals
            return 1.0 / (np.exp(s * x) + eps + np.exp(-(s * x)))
        if f == "min":
            return np.minimum(*_align(*vals))
        if f == "max":
            return np.maximum(*_align(*vals))
        if f == "norm":
            x = vals[0]
            return np.sqrt(np.sum(x * x, axis=-1))
        if f == "sum":
            return np.sum(vals[0], axis=-1)
        if f == "mean":
            return np.mean(vals[0], axis=-1)
        if f == "quat_mul":
            return geom.quat_mul(vals[0], vals[1])
        if f == "quat_conj":
            return geom.quat_conjugate(vals[0])
        if f == "quat_rotate":
            return geom.quat_rotate(vals[0], vals[1])
        if f == "euler_xyz":
            return geom.euler_xyz(vals[0])
        raise ValueError(f"unknown function {f}")


def evaluate(program: RewardProgram, obs) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Evaluate ``program`` on a batch of observations.

    Returns the per-env total and a dict of per-env component values. Raises
    ``EvalFault`` naming the first output binding (total or a component) that
    holds a NaN or infinity in any env.
    """
    n = len(next(iter(obs.values())))
    ev = _Evaluator(obs)
    outputs = set(program.components) | {"total"}
    results: dict[str, np.ndarray] = {}
    with np.errstate(all="ignore"):
        for b in program.bindings:
            value = ev.eval(b.expr)
            ev.env[b.name] = value
            if b.name in outputs:
                value = np.broadcast_to(np.asarray(value, dtype=np.float64), (n,))
                if not np.isfinite(value).all():
                    raise EvalFault(b.name)
                results[b.name] = value
    total = results.pop("total")
    return total, {name: results[name] for name in program.components}
