"""Prompt construction for reward-program generation."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

from ..env import BONUS_PENALTY_NAMES

TASK_DESCRIPTION = (
    "To imbue the agent with the ability to reposition and reorient objects to a target position "
    "and orientation by regrasping or finger gaiting, where contacts with the object must be "
    "detached and repositioned locally during manipulation."
)

#: inputs offered by the unmodified signature: object and goal position only
MINIMAL_NAMES = ("obj_base_pos", "goal_base_pos")


class PromptStrategy(enum.Enum):
    ORIGINAL = "original"
    MOD_TEMPLATE = "mod"
    BONUS_PENALTY = "bp"
    BONUS_PENALTY_MOD = "bpmod"

    @property
    def full_roster(self) -> bool:
        return self in (PromptStrategy.MOD_TEMPLATE, PromptStrategy.BONUS_PENALTY_MOD)

    @property
    def bonus_penalty(self) -> bool:
        return self in (PromptStrategy.BONUS_PENALTY, PromptStrategy.BONUS_PENALTY_MOD)

    @classmethod
    def parse(cls, text: str) -> "PromptStrategy":
        try:
            return cls(text.lower())
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown strategy {text!r}; expected one of {choices}") from None


ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass
class Transcript:
    messages: list = field(default_factory=list)

    def __post_init__(self):
        if self.messages and self.messages[0].role != "system":
            raise ValueError("a transcript must start with a system message")

    def __len__(self):
        return len(self.messages)

    @property
    def iteration(self) -> int:
        """Number of completed feedback rounds (0 for the initial prompt)."""
        return max(0, (len(self.messages) - 2) // 2)

    @property
    def system(self) -> str:
        return self.messages[0].content

    def extended(self, assistant: str, feedback: str) -> "Transcript":
        """A new transcript with one assistant reply and one feedback message appended."""
        return Transcript(self.messages + [Message("assistant", assistant), Message("user", feedback)])

    def to_list(self) -> list[dict]:
        return [m.to_dict() for m in self.messages]

    @classmethod
    def from_list(cls, items) -> "Transcript":
        return cls([Message(m["role"], m["content"]) for m in items])


def signature_names(strategy: PromptStrategy, roster: dict) -> list[str]:
    """Input names offered to the model, in the order they are listed."""
    if strategy.full_roster:
        body = [n for n in roster if n not in BONUS_PENALTY_NAMES]
    else:
        body = [n for n in MINIMAL_NAMES if n in roster]
    if strategy.bonus_penalty:
        return [n for n in BONUS_PENALTY_NAMES if n in roster] + body
    return body


def strategy_roster(strategy: PromptStrategy, roster: dict) -> dict:
    """Name -> shape map restricted to the names a strategy offers."""
    return {n: roster[n] for n in signature_names(strategy, roster)}


def _shape_text(shape) -> str:
    if not shape:
        return "scalar"
    return "[" + ", ".join(str(d) for d in shape) + "]"


_BP_NOTES = {
    "success_bonus": "scale and add to the total",
    "early_reset_penalty_value": "scale and subtract from the total",
}

SIGNATURE_OPEN = "inputs {"
SIGNATURE_CLOSE = "}"


def signature_block(strategy: PromptStrategy, roster: dict) -> str:
    names = signature_names(strategy, roster)
    lines = [SIGNATURE_OPEN]
    for name in names:
        if name == BONUS_PENALTY_NAMES[0]:
            lines.append("    # termination penalty and success bonus")
        note = f"  # {_BP_NOTES[name]}" if name in _BP_NOTES else ""
        lines.append(f"    {name}: {_shape_text(roster[name])}{note}")
        if name == BONUS_PENALTY_NAMES[-1] and strategy.full_roster:
            lines.append("")
    lines.append(SIGNATURE_CLOSE)
    return "\n".join(lines)


_SIG_LINE = re.compile(r"^\s+([A-Za-z_][A-Za-z0-9_]*):")


def parse_signature(text: str) -> list[str]:
    """Recover the offered input names from a prompt containing a signature block."""
    start = text.find(SIGNATURE_OPEN)
    if start < 0:
        return []
    names = []
    for line in text[start + len(SIGNATURE_OPEN):].splitlines():
        if line.strip() == SIGNATURE_CLOSE:
            break
        m = _SIG_LINE.match(line)
        if m:
            names.append(m.group(1))
    return names


SCAFFOLD = """\
You design reward functions for reinforcement learning agents. Write the reward \
program that gives the agent the best chance of learning the task described below. \
Build it from the observations the environment provides; the available inputs and \
their per-environment shapes are:

{signature}
"""

GRAMMAR = """\
Reward programs are written in a small expression language, not Python:
    - one binding per line: name = expression; long expressions may continue across \
lines inside parentheses; '#' starts a comment
    - arithmetic + - * / and ^ (power); comparisons must be parenthesised, e.g. (a < b), \
and evaluate to 1.0 or 0.0
    - elementwise functions: exp log tanh abs sqrt sin cos asin acos; clamp(x, lo, hi); \
where(mask, a, b); lgsk(x, scale, eps); min(a, b); max(a, b)
    - reductions over the last axis: norm(v) mean(v) sum(v); indexing with slice(v, lo, hi) \
and at(v, i) using integer literals
    - quaternions (x, y, z, w): quat_mul(q, r) quat_conj(q) quat_rotate(q, v) euler_xyz(q)
    - the constant pi
    - scalars broadcast against vectors; other shapes must match exactly
A program must bind 'total', the per-environment scalar reward. Every other binding \
whose name does not start with '_' is reported as a reward component and must also be \
a per-environment scalar; use '_' names for constants and intermediate values.
"""

OUTPUT_TIPS = """\
Return the reward as:
    (1) a binding named total holding the overall reward,
    (2) one named binding for each reward component you want tracked.
Put the program in a single fenced code block: ```rwd ... ```.

Tips for writing the reward program:
    (1) Bounded transformations such as exp keep rewards and their components on a \
comparable scale.
    (2) When you transform a component, give its temperature its own '_' constant \
instead of inlining the number.
    (3) Only the listed inputs exist; do not invent new ones.
"""

ENVIRONMENT = """\
The environment simulates an object held by the four fingertips of a hand. Each step the \
policy applies a torque to the object about three axes and opens or closes its grip. The \
target orientation sits a fixed angle ahead of the object about a commanded pivot axis; \
each time the object reaches it, the target advances by the same angle and the episode \
continues. Episodes end early when the object drifts too far from the target, rotates \
away from the pivot axis, or loses all fingertip contacts, and otherwise last 600 steps \
(30 s).
Write a reward program for the following task: {task}
Use only the inputs listed in the system message and answer with one ```rwd``` block.
"""


def build_initial_prompt(strategy: PromptStrategy, roster: dict,
                         task_description: str = TASK_DESCRIPTION) -> Transcript:
    """System message (scaffold, grammar, signature, tips) plus the task message."""
    if not roster:
        raise ValueError("cannot build a prompt from an empty roster")
    if not signature_names(strategy, roster):
        raise ValueError(f"roster offers none of the inputs strategy {strategy.value!r} needs")
    system = "\n".join([
        SCAFFOLD.format(signature=signature_block(strategy, roster)),
        GRAMMAR,
        OUTPUT_TIPS,
    ])
    user = ENVIRONMENT.format(task=task_description)
    return Transcript([Message("system", system), Message("user", user)])
