"""Bundled reward programs ported from published reward functions."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

from .nodes import RewardProgram
from .parser import parse

BUILTIN_NAMES = ("baseline", "gemini_best", "gpt4o_best", "llama_best", "o3mini_best", "deepseek_best")


def builtin_source(name: str) -> str:
    if name not in BUILTIN_NAMES:
        raise KeyError(f"unknown builtin reward {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    return resources.files(__package__).joinpath("library", f"{name}.rwd").read_text()


@lru_cache(maxsize=None)
def builtin(name: str) -> RewardProgram:
    return parse(builtin_source(name), origin="builtin")
