"""Code-size metrics for reward programs: observations used, lines of code, Halstead counts.

Operators are binary operators, unary negation, comparisons, function names
and the binding ``=``. Operands are identifiers (binding targets included)
and numeric literals, the latter keyed by value.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .nodes import BinOp, Call, Compare, Name, Neg, Num, RewardProgram, walk
from .parser import default_names
from .printer import format_number, to_source


@dataclass(frozen=True)
class Halstead:
    n1: int  # distinct operators
    n2: int  # distinct operands
    N1: int  # total operators
    N2: int  # total operands

    @property
    def vocabulary(self) -> int:
        return self.n1 + self.n2

    @property
    def length(self) -> int:
        return self.N1 + self.N2

    @property
    def volume(self) -> float:
        return self.length * math.log2(self.vocabulary) if self.vocabulary else 0.0


@dataclass(frozen=True)
class CodeMetrics:
    vars_used: int
    loc: int
    halstead: Halstead

    @property
    def volume(self) -> float:
        return self.halstead.volume


def count_tokens(program: RewardProgram) -> tuple[Counter, Counter]:
    operators: Counter = Counter()
    operands: Counter = Counter()
    for b in program.bindings:
        operators["="] += 1
        operands[b.name] += 1
        for node in walk(b.expr):
            if isinstance(node, Num):
                operands[format_number(node.value)] += 1
            elif isinstance(node, Name):
                operands[node.id] += 1
            elif isinstance(node, Neg):
                operators["neg"] += 1
            elif isinstance(node, (BinOp, Compare)):
                operators[node.op] += 1
            elif isinstance(node, Call):
                operators[node.func] += 1
    return operators, operands


def count_loc(source: str) -> int:
    return sum(1 for line in source.splitlines() if line.strip() and not line.strip().startswith("#"))


def analyze(program: RewardProgram, roster=None) -> CodeMetrics:
    names = default_names() if roster is None else set(roster)
    operators, operands = count_tokens(program)
    halstead = Halstead(len(operators), len(operands), sum(operators.values()), sum(operands.values()))
    source = program.source or to_source(program)
    vars_used = len(program.observations() & set(names))
    return CodeMetrics(vars_used=vars_used, loc=count_loc(source), halstead=halstead)
