"""Sandboxed expression language for reward programs."""

from .builtins import BUILTIN_NAMES, builtin, builtin_source
from .extract import ExtractError, extract_code_block
from .interp import EvalFault, evaluate
from .metrics import CodeMetrics, Halstead, analyze
from .nodes import FUNCTIONS, RewardProgram
from .parser import ParseError, parse
from .printer import to_source
from .reference import evaluate_row
from .shapes import ShapeError, check

__all__ = [
    "BUILTIN_NAMES", "CodeMetrics", "EvalFault", "ExtractError", "FUNCTIONS", "Halstead",
    "ParseError", "RewardProgram", "ShapeError", "analyze", "builtin", "builtin_source", "check",
    "evaluate", "evaluate_row", "extract_code_block", "parse", "to_source",
]
