"""Pull reward-program text out of a chat response."""

from __future__ import annotations

import re

_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


class ExtractError(ValueError):
    pass


def extract_code_block(text: str) -> str:
    """Body of the first triple-backtick fenced block; any info string is accepted."""
    m = _FENCE_RE.search(text)
    if m is None:
        raise ExtractError("response contains no fenced code block")
    return m.group(1)
