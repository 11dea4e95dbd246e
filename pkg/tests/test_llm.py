from pathlib import Path

import numpy as np
import pytest
import requests

from reward_forge.env import BONUS_PENALTY_NAMES, roster
from reward_forge.llm import (
    DEFAULT_LIBRARY, TASK_DESCRIPTION, AuthError, LlmEndpoint, Message, PromptStrategy, ProtocolError,
    RetriesExhausted, Transcript, build_initial_prompt, build_reflection, chat, lineage_of, parse_reflection,
    parse_signature, signature_names, strategy_roster, stub_chat,
)
from reward_forge.llm.client import API_KEY_ENV, LlmError
from reward_forge.llm.stub import Template, eligible, mutate_constants
from reward_forge.ppo import ComponentStats, TrainResult
from reward_forge.reward_lang import ParseError, check, extract_code_block, parse

GOLDEN = Path(__file__).parent / "golden"
ROSTER = roster(6)

# the task sentence, word for word
EXPECTED_TASK = (
    "To imbue the agent with the ability to reposition and reorient objects to a target position and "
    "orientation by regrasping or finger gaiting, where contacts with the object must be detached and "
    "repositioned locally during manipulation."
)


# --------------------------------------------------------------------------
# prompts
# --------------------------------------------------------------------------

def test_task_description_verbatim():
    assert TASK_DESCRIPTION == EXPECTED_TASK
    prompt = build_initial_prompt(PromptStrategy.BONUS_PENALTY_MOD, ROSTER)
    assert EXPECTED_TASK in prompt.messages[1].content


def test_original_signature_has_two_names():
    assert signature_names(PromptStrategy.ORIGINAL, ROSTER) == ["obj_base_pos", "goal_base_pos"]


def test_bonus_penalty_names_listed_first():
    names = signature_names(PromptStrategy.BONUS_PENALTY_MOD, ROSTER)
    assert names[:2] == list(BONUS_PENALTY_NAMES)
    assert set(names) == set(ROSTER)
    assert signature_names(PromptStrategy.BONUS_PENALTY, ROSTER) == list(BONUS_PENALTY_NAMES) + [
        "obj_base_pos", "goal_base_pos"]


def test_mod_offers_everything_but_bonus_penalty():
    names = signature_names(PromptStrategy.MOD_TEMPLATE, ROSTER)
    assert not set(names) & set(BONUS_PENALTY_NAMES)
    assert len(names) == len(ROSTER) - 2


@pytest.mark.parametrize("strategy", list(PromptStrategy))
def test_signature_round_trips_through_prompt(strategy):
    prompt = build_initial_prompt(strategy, ROSTER)
    assert parse_signature(prompt.system) == signature_names(strategy, ROSTER)
    assert len(prompt) == 2 and prompt.iteration == 0


def test_bonus_penalty_signature_comment():
    system = build_initial_prompt(PromptStrategy.BONUS_PENALTY_MOD, ROSTER).system
    assert "# termination penalty and success bonus" in system
    assert "success_bonus: scalar" in system


def test_empty_roster_rejected():
    with pytest.raises(ValueError):
        build_initial_prompt(PromptStrategy.ORIGINAL, {})


def test_strategy_parse():
    assert PromptStrategy.parse("BPMod") is PromptStrategy.BONUS_PENALTY_MOD
    with pytest.raises(ValueError, match="original"):
        PromptStrategy.parse("greedy")


def test_transcript_grows_two_messages_per_round():
    t = build_initial_prompt(PromptStrategy.BONUS_PENALTY_MOD, ROSTER)
    for k in range(1, 4):
        t = t.extended(f"reply {k}", f"feedback {k}")
        assert len(t) == 2 + 2 * k
        assert t.iteration == k
    assert [m.role for m in t.messages[-2:]] == ["assistant", "user"]
    assert Transcript.from_list(t.to_list()) == t


def test_transcript_must_start_with_system():
    with pytest.raises(ValueError):
        Transcript([Message("user", "hi")])
    with pytest.raises(ValueError):
        Message("robot", "hi")


# --------------------------------------------------------------------------
# reflection
# --------------------------------------------------------------------------

def _fixed_result():
    return TrainResult(
        task_score=[0.0, 0.5, 1.25, 2.0],
        components={
            "success_reward": ComponentStats([0.0, 0.1, 0.3, 0.5], 0.62, 0.2345, 0.0),
            "kp_reward": ComponentStats([0.43, 0.51, 0.58, 0.6], 0.61, 0.529, 0.4),
        },
        checkpoint_steps=[0, 100, 200, 300],
        total_steps=400,
    )


FIXED_SOURCE = "kp_reward = exp(-mean(norm(active_kp)))\nsuccess_reward = success_bonus\n" \
               "total = kp_reward + success_reward\n"


def test_reflection_matches_golden_file():
    text = build_reflection(FIXED_SOURCE, _fixed_result())
    assert text == (GOLDEN / "reflection.txt").read_text()


def test_reflection_line_order():
    lines = build_reflection(FIXED_SOURCE, _fixed_result()).splitlines()
    series = [ln.split(":")[0] for ln in lines if ", Max: " in ln]
    assert series == ["kp_reward", "success_reward", "task_score"]
    assert "kp_reward: ['0.43', '0.51', '0.58', '0.60'], Max: 0.61, Mean: 0.53, Min: 0.40" in lines
    assert "task_score: ['0.00', '0.50', '1.25', '2.00'], Max: 2.00, Mean: 0.94, Min: 0.00" in lines


def test_reflection_parses_back():
    parsed = parse_reflection(build_reflection(FIXED_SOURCE, _fixed_result()))
    assert list(parsed) == ["kp_reward", "success_reward", "task_score"]
    assert parsed["kp_reward"].values == [0.43, 0.51, 0.58, 0.6]
    assert parsed["success_reward"].mean == pytest.approx(0.23)
    assert parsed["task_score"].max == 2.0


def test_reflection_needs_two_checkpoints():
    result = _fixed_result()
    result.task_score = [1.0]
    with pytest.raises(ValueError):
        build_reflection(FIXED_SOURCE, result)


# --------------------------------------------------------------------------
# client
# --------------------------------------------------------------------------

class FakeResponse:
    def __init__(self, status, payload=None, text=""):
        self.status_code = status
        self._payload = payload
        self.text = text

    def json(self):
        if self._payload is None:
            raise ValueError("no json")
        return self._payload


class FakeSession:
    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        item = self.script.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def _ok(content="```\ntotal = kp_dist\n```"):
    return FakeResponse(200, {"choices": [{"message": {"role": "assistant", "content": content}}]})


def _transcript():
    return build_initial_prompt(PromptStrategy.ORIGINAL, ROSTER)


def test_chat_request_shape(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "secret")
    session = FakeSession([_ok("hello")])
    ep = LlmEndpoint("https://example.test/v1/", model="m1", temperature=0.7)
    assert chat(ep, _transcript(), session=session) == "hello"
    call = session.calls[0]
    assert call["url"] == "https://example.test/v1/chat/completions"
    assert call["headers"]["Authorization"] == "Bearer secret"
    assert call["json"]["model"] == "m1"
    assert call["json"]["temperature"] == 0.7
    assert call["json"]["messages"] == _transcript().to_list()


def test_chat_retries_with_backoff():
    sleeps = []
    session = FakeSession([FakeResponse(503), requests.Timeout("slow"), FakeResponse(429), _ok("done")])
    ep = LlmEndpoint("https://example.test", api_key="k", max_retries=3, backoff=0.5)
    assert chat(ep, _transcript(), session=session, sleep=sleeps.append) == "done"
    assert sleeps == [0.5, 1.0, 2.0]


def test_chat_gives_up_after_retries():
    session = FakeSession([FakeResponse(500)] * 3)
    ep = LlmEndpoint("https://example.test", api_key="k", max_retries=2)
    with pytest.raises(RetriesExhausted, match="3 attempts"):
        chat(ep, _transcript(), session=session, sleep=lambda s: None)


@pytest.mark.parametrize("status", [401, 403])
def test_chat_auth_failure_not_retried(status):
    session = FakeSession([FakeResponse(status)])
    with pytest.raises(AuthError):
        chat(LlmEndpoint("https://example.test", api_key="bad"), _transcript(), session=session)
    assert len(session.calls) == 1


@pytest.mark.parametrize("resp", [
    FakeResponse(200, None), FakeResponse(200, {"choices": []}), FakeResponse(200, {"choices": [{}]}),
    FakeResponse(200, {"choices": [{"message": {"content": 3}}]}),
])
def test_chat_protocol_errors(resp):
    with pytest.raises(ProtocolError):
        chat(LlmEndpoint("https://example.test", api_key="k"), _transcript(), session=FakeSession([resp]))


def test_chat_client_error_surfaces_status():
    with pytest.raises(LlmError, match="400"):
        chat(LlmEndpoint("https://example.test", api_key="k"), _transcript(),
             session=FakeSession([FakeResponse(400, text="bad request")]))


def test_stub_endpoint_needs_no_network():
    ep = LlmEndpoint("stub://7")
    assert ep.is_stub and ep.stub_seed == 7
    reply = chat(ep, _transcript(), session=FakeSession([]))
    assert "```" in reply
    with pytest.raises(ValueError):
        LlmEndpoint("stub://seven").stub_seed


def test_endpoint_describe_omits_key():
    assert "api_key" not in LlmEndpoint("https://x", api_key="k").describe()


# --------------------------------------------------------------------------
# stub
# --------------------------------------------------------------------------

def test_stub_is_deterministic():
    t = build_initial_prompt(PromptStrategy.BONUS_PENALTY_MOD, ROSTER)
    assert stub_chat(7, t, 3) == stub_chat(7, t, 3)
    assert len({stub_chat(7, t, j) for j in range(4)}) > 1


def test_stub_respects_offered_names():
    t = build_initial_prompt(PromptStrategy.ORIGINAL, ROSTER)
    offered = set(parse_signature(t.system))
    for j in range(20):
        code = extract_code_block(stub_chat(3, t, j))
        try:
            program = parse(code)
        except ParseError:
            continue
        assert program.observations() <= offered


def test_library_has_runnable_and_broken_templates():
    names = set(strategy_roster(PromptStrategy.BONUS_PENALTY_MOD, ROSTER))
    ok = broken = 0
    for tpl in DEFAULT_LIBRARY:
        try:
            check(parse(tpl.source, names=names), ROSTER)
            ok += 1
        except (ParseError, ValueError):
            broken += 1
    assert ok >= 2 and broken >= 2
    assert [t.name for t in DEFAULT_LIBRARY if t.strong] == ["keypoint_bonus"]
    assert "success_bonus" in next(t for t in DEFAULT_LIBRARY if t.strong).requires


def test_eligible_filters_by_requirements():
    assert all(t.requires <= {"obj_base_pos", "goal_base_pos"}
               for t in eligible(DEFAULT_LIBRARY, ["obj_base_pos", "goal_base_pos"]))


def test_mutation_scales_only_underscore_constants():
    src = "_k = 2.0\nscaled = 3.0 * kp_dist * _k\ntotal = scaled\n"
    out = mutate_constants(src, np.random.default_rng(0))
    prog = parse(out)
    k = prog.binding("_k").expr.value
    assert 2.0 * np.exp(-0.4) <= k <= 2.0 * np.exp(0.4) and k != 2.0
    assert "3 * kp_dist" in out or "3.0 * kp_dist" in out
    assert mutate_constants("total = (", np.random.default_rng(0)) == "total = ("


def test_stub_refines_prior_program_in_later_rounds():
    lib = (Template("only", frozenset({"kp_dist"}), "_c = 1.0\ntotal = _c * kp_dist\n"),)
    t = build_initial_prompt(PromptStrategy.BONUS_PENALTY_MOD, ROSTER)
    first = stub_chat(1, t, 0, library=lib)
    t2 = t.extended(first, "feedback")
    replies = [stub_chat(1, t2, j, library=lib) for j in range(10)]
    assert any("Refining" in r for r in replies)
    assert all(lineage_of(extract_code_block(r)) == "only" for r in replies)
