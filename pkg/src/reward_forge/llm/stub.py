"""Deterministic offline stand-in for a chat model.

Replies are drawn from a small library of reward programs, some deliberately
broken, filtered to the inputs the prompt offers. Later rounds often mutate
the program the transcript last accepted instead of drawing a fresh template.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass

import numpy as np

from ..reward_lang import ExtractError, ParseError, extract_code_block, parse, to_source
from ..reward_lang.nodes import Binding, Num
from .prompts import Transcript, parse_signature

MUTATE_PRIOR_PROB = 0.6
LINEAGE_PREFIX = "# lineage: "


@dataclass(frozen=True)
class Template:
    name: str
    requires: frozenset
    source: str
    strong: bool = False


def _t(name, requires, source, strong=False):
    return Template(name, frozenset(requires), source, strong)


_POSE = ("obj_base_pos", "goal_base_pos")
_BP = ("success_bonus", "early_reset_penalty_value")

DEFAULT_LIBRARY = (
    _t("keypoint_bonus", _BP + ("active_kp", "kp_dist"), """\
_kp_temp = 2.0
_bonus_scale = 10.0
_penalty_scale = 1.0
kp_reward = exp(-mean(norm(active_kp)) / (_kp_temp * kp_dist))
success_reward = _bonus_scale * success_bonus
reset_penalty = -_penalty_scale * early_reset_penalty_value
total = kp_reward + success_reward + reset_penalty
""", strong=True),
    _t("pose_bonus", _BP + _POSE, """\
_pos_temp = 0.01
_bonus_scale = 5.0
pos_reward = exp(-norm(obj_base_pos - goal_base_pos) / _pos_temp)
success_reward = _bonus_scale * success_bonus
reset_penalty = -early_reset_penalty_value
total = pos_reward + success_reward + reset_penalty
"""),
    _t("keypoint_dense", ("active_kp", "kp_dist"), """\
_kp_temp = 2.0
kp_reward = exp(-mean(norm(active_kp)) / (_kp_temp * kp_dist))
total = kp_reward
"""),
    _t("orientation_contact", ("active_quat", "n_tip_contacts"), """\
_orn_temp = 0.5
_contact_weight = 0.1
orn_reward = exp(-2.0 * asin(min(norm(slice(active_quat, 0, 3)), 1.0)) / _orn_temp)
contact_reward = _contact_weight * n_tip_contacts
total = orn_reward + contact_reward
"""),
    _t("position_exp", _POSE, """\
_pos_temp = 0.01
pos_reward = exp(-norm(obj_base_pos - goal_base_pos) / _pos_temp)
total = pos_reward
"""),
    _t("position_linear", _POSE, """\
_pos_scale = 10.0
pos_penalty = -_pos_scale * norm(obj_base_pos - goal_base_pos)
total = pos_penalty
"""),
    # broken by construction
    _t("unclosed_paren", _POSE, """\
_pos_scale = 2.0
pos_reward = -_pos_scale * norm(obj_base_pos - goal_base_pos
total = pos_reward
"""),
    _t("unknown_function", _POSE, """\
pos_reward = softplus(-norm(obj_base_pos - goal_base_pos))
total = pos_reward
"""),
    _t("vector_total", _POSE, """\
total = obj_base_pos - goal_base_pos
"""),
    _t("log_of_zero", _POSE, """\
_d = norm(obj_base_pos - goal_base_pos)
log_distance = log(_d * 0.0)
total = log_distance
"""),
)


def eligible(library, offered) -> list[Template]:
    if not offered:
        return list(library)
    offered = set(offered)
    return [t for t in library if t.requires <= offered]


def mutate_constants(source: str, rng: np.random.Generator) -> str:
    """Scale every ``_name = <number>`` constant by a random factor in [e^-0.4, e^0.4].

    Sources that do not parse are returned unchanged.
    """
    try:
        program = parse(source)
    except ParseError:
        return source
    bindings = []
    for b in program.bindings:
        if b.name.startswith("_") and isinstance(b.expr, Num):
            value = float(f"{b.expr.value * np.exp(rng.uniform(-0.4, 0.4)):.4g}")
            b = Binding(b.name, dataclasses.replace(b.expr, value=value))
        bindings.append(b)
    return to_source(dataclasses.replace(program, bindings=tuple(bindings), source=""))


_LINEAGE = re.compile(r"^# lineage: (\S+)$", re.M)


def lineage_of(text: str) -> str | None:
    m = _LINEAGE.search(text)
    return m.group(1) if m else None


def _strip_lineage(source: str) -> str:
    return _LINEAGE.sub("", source).lstrip("\n")


def _last_accepted(transcript: Transcript):
    for m in reversed(transcript.messages):
        if m.role == "assistant":
            try:
                code = extract_code_block(m.content)
            except ExtractError:
                return None
            return lineage_of(code) or "unknown", _strip_lineage(code)
    return None


def stub_chat(seed: int, transcript: Transcript, sample: int = 0, library=DEFAULT_LIBRARY) -> str:
    """Reply for one sample; a pure function of (seed, transcript, sample, library)."""
    it = transcript.iteration
    pool = eligible(library, parse_signature(transcript.system)) if transcript.messages else list(library)
    if not pool:
        return "No program fits the inputs offered."
    rng = np.random.default_rng([seed, it, sample])
    prior = _last_accepted(transcript) if it > 0 else None
    if prior is not None and rng.random() < MUTATE_PRIOR_PROB:
        lineage, base = prior
        note = f"Refining the {lineage} program from the previous round."
    else:
        order = np.random.default_rng([seed, it]).permutation(len(pool))
        template = pool[int(order[sample % len(pool)])]
        lineage, base = template.name, template.source
        note = f"Trying the {lineage} design."
    body = mutate_constants(base, rng)
    code = LINEAGE_PREFIX + lineage + "\n" + body.rstrip("\n") + "\n"
    return f"{note}\n\n```rwd\n{code}```\n"
