"""Training feedback text for the next round of reward generation, and its parser."""

from __future__ import annotations

import ast
import re

from ..ppo import ComponentStats, TrainResult
from ..reward_lang import ParseError, parse
from .prompts import OUTPUT_TIPS

HEADER = (
    "We trained a policy with the reward program above and recorded each reward component, "
    "together with the task score (average successes per episode reset), at {count} evenly "
    "spaced checkpoints, plus the maximum, mean and minimum over training:"
)

ANALYSIS_TIPS = """\
Study this feedback and write an improved reward program. When reading it:
    (1) If the task score stays near zero, discard the program and write a new one from scratch.
    (2) A component whose values barely change across checkpoints is not being optimised. \
Rescale it, adjust its temperature, rewrite it, or remove it.
    (3) A component much larger than the others dominates learning; bring it into range.
Go through the components one by one with these points in mind before writing the new program.
"""


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def series_line(name: str, stats: ComponentStats) -> str:
    values = [_fmt(v) for v in stats.values]
    return f"{name}: {values}, Max: {_fmt(stats.max)}, Mean: {_fmt(stats.mean)}, Min: {_fmt(stats.min)}"


def _component_order(prev_best_source: str, result: TrainResult) -> list[str]:
    try:
        declared = parse(prev_best_source).components
    except ParseError:
        declared = []
    names = [n for n in declared if n in result.components]
    return names + [n for n in result.components if n not in names]


def build_reflection(prev_best_source: str, result: TrainResult) -> str:
    """Per-component checkpoint values and extrema, the task score, then guidance."""
    if len(result.task_score) < 2:
        raise ValueError("reflection needs at least two checkpoints")
    lines = [HEADER.format(count=len(result.task_score))]
    for name in _component_order(prev_best_source, result):
        lines.append(series_line(name, result.components[name]))
    s = result.task_score
    lines.append(series_line("task_score", ComponentStats(list(s), max(s), sum(s) / len(s), min(s))))
    return "\n".join(lines) + "\n" + ANALYSIS_TIPS + OUTPUT_TIPS


_LINE = re.compile(
    r"^(?P<name>[A-Za-z_][A-Za-z0-9_]*): (?P<values>\[.*?\]), "
    r"Max: (?P<max>\S+), Mean: (?P<mean>\S+), Min: (?P<min>\S+)$"
)


def parse_reflection(text: str) -> dict[str, ComponentStats]:
    """Recover the series lines of a feedback message, in order of appearance."""
    out = {}
    for line in text.splitlines():
        m = _LINE.match(line.strip())
        if not m:
            continue
        values = [float(v) for v in ast.literal_eval(m.group("values"))]
        out[m.group("name")] = ComponentStats(values, float(m.group("max")), float(m.group("mean")),
                                              float(m.group("min")))
    return out
