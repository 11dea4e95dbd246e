import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reward_forge.env import EnvConfig, RotateEnv, roster
from reward_forge.reward_lang import (
    BUILTIN_NAMES, EvalFault, ExtractError, ParseError, ShapeError, analyze, builtin, builtin_source, check,
    evaluate, evaluate_row, extract_code_block, parse, to_source,
)

from oracles import GEMINI_BEST_AT_GOAL, halstead_volume

ROSTER = roster(6)
SCALARS = ["n_tip_contacts", "n_good_contacts", "kp_dist", "success_bonus", "early_reset_penalty_value",
           "n_tips"]
VECTORS = ["obj_base_pos", "active_pos", "obj_base_angvel", "pivot_axel_worldframe"]
QUATS = ["active_quat", "obj_base_orn"]


# --------------------------------------------------------------------------
# random program generator
# --------------------------------------------------------------------------

class ProgramGen:
    def __init__(self, rng):
        self.rng = rng
        self.scalars = list(SCALARS)

    def choice(self, xs):
        return xs[int(self.rng.integers(len(xs)))]

    def num(self):
        return f"{self.rng.uniform(-3, 3):.3f}"

    def vec(self, depth):
        r = self.rng.random()
        if depth <= 0 or r < 0.4:
            return self.choice(VECTORS)
        if r < 0.6:
            return f"({self.vec(depth - 1)} {self.choice(['+', '-'])} {self.vec(depth - 1)})"
        if r < 0.75:
            return f"{self.scalar(depth - 1)} * {self.vec(depth - 1)}"
        if r < 0.9:
            return f"quat_rotate({self.choice(QUATS)}, {self.vec(depth - 1)})"
        return f"slice({self.choice(QUATS)}, 0, 3)"

    def scalar(self, depth):
        r = self.rng.random()
        if depth <= 0 or r < 0.2:
            return self.choice(self.scalars) if self.rng.random() < 0.6 else self.num()
        a = lambda: self.scalar(depth - 1)  # noqa: E731
        forms = [
            lambda: f"({a()} {self.choice(['+', '-', '*'])} {a()})",
            lambda: f"{a()} / (abs({a()}) + 1.0)",
            lambda: f"-{a()}",
            lambda: f"abs({a()}) ^ {self.rng.uniform(0.5, 2.5):.2f}",
            lambda: f"{self.choice(['exp', 'tanh', 'sin', 'cos'])}(clamp({a()}, -5.0, 5.0))",
            lambda: f"log(abs({a()}) + 0.1)",
            lambda: f"sqrt(abs({a()}))",
            lambda: f"{self.choice(['min', 'max'])}({a()}, {a()})",
            lambda: f"where(({a()} {self.choice(['<', '<=', '>', '>=', '=='])} {a()}), {a()}, {a()})",
            lambda: f"lgsk({a()}, 5.0, 2.0)",
            lambda: f"{self.choice(['norm', 'sum', 'mean'])}({self.vec(depth - 1)})",
            lambda: f"at({self.vec(depth - 1)}, {int(self.rng.integers(3))})",
            lambda: f"asin(clamp({a()}, -1.0, 1.0))",
            lambda: f"at(euler_xyz({self.choice(QUATS)}), {int(self.rng.integers(3))})",
            lambda: f"mean(norm(active_kp))",
        ]
        return self.choice(forms)()

    def program(self):
        lines = []
        n_bind = int(self.rng.integers(1, 4))
        for k in range(n_bind):
            name = f"_t{k}" if self.rng.random() < 0.4 else f"part_{k}"
            lines.append(f"{name} = {self.scalar(3)}")
            self.scalars.append(name)
        lines.append(f"total = {self.scalar(3)}")
        self.scalars = list(SCALARS)
        return "\n".join(lines) + "\n"


def random_obs(rng, n):
    obs = {}
    for name, shape in ROSTER.items():
        arr = rng.standard_normal((n,) + shape)
        if shape == (4,):
            arr /= np.linalg.norm(arr, axis=1, keepdims=True)
        obs[name] = arr
    for name in ("n_tip_contacts", "n_good_contacts"):
        obs[name] = rng.integers(0, 5, n).astype(float)
    obs["n_tips"] = np.full(n, 4.0)
    return obs


def _rows(obs, n):
    return [{k: v[i].tolist() for k, v in obs.items()} for i in range(n)]


def _first_fault(program, rows):
    order = [b.name for b in program.bindings]
    faults = []
    for row in rows:
        try:
            evaluate_row(program, row)
        except EvalFault as e:
            faults.append(order.index(e.binding))
    return order[min(faults)] if faults else None


def test_interpreter_matches_reference_on_random_programs():
    rng = np.random.default_rng(2024)
    gen = ProgramGen(rng)
    checked, faulted = 0, 0
    for _ in range(100):
        program = parse(gen.program())
        check(program, ROSTER)
        obs = random_obs(rng, 100)
        rows = _rows(obs, 100)
        expect_fault = _first_fault(program, rows)
        if expect_fault is not None:
            with pytest.raises(EvalFault) as info:
                evaluate(program, obs)
            assert info.value.binding == expect_fault
            faulted += 1
            continue
        total, comps = evaluate(program, obs)
        for i, row in enumerate(rows):
            ref_total, ref_comps = evaluate_row(program, row)
            assert total[i] == pytest.approx(ref_total, rel=1e-9, abs=1e-9)
            for name, value in ref_comps.items():
                assert comps[name][i] == pytest.approx(value, rel=1e-9, abs=1e-9)
        checked += 1
    assert checked >= 80


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtin_print_parse_fixed_point(name):
    program = builtin(name)
    printed = to_source(program)
    again = parse(printed)
    assert again == program
    assert to_source(again) == printed


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtins_check_against_full_roster(name):
    check(builtin(name), ROSTER)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtins_agree_with_reference_on_env_states(name):
    env = RotateEnv(EnvConfig(num_envs=16, seed=5))
    rng = np.random.default_rng(0)
    for _ in range(10):
        env.step(rng.uniform(-1, 1, (16, 4)))
    obs = env.observe()
    total, comps = evaluate(builtin(name), obs)
    for i in range(16):
        ref_total, ref_comps = evaluate_row(builtin(name), {k: v[i].tolist() for k, v in obs.items()})
        assert total[i] == pytest.approx(ref_total, rel=1e-9, abs=1e-9)


def test_gemini_best_at_goal_with_full_contacts():
    env = RotateEnv(EnvConfig(num_envs=2, noise_std=0.0))
    s = env.state
    s.obj_orn = s.goal_orn.copy()
    s.obj_pos_offset = np.zeros((2, 3))
    obs = env.observe()
    assert obs["n_good_contacts"].tolist() == [4.0, 4.0]
    total, _ = evaluate(builtin("gemini_best"), obs)
    assert total == pytest.approx([25.76159] * 2, abs=1e-5)
    assert total == pytest.approx([GEMINI_BEST_AT_GOAL] * 2, abs=1e-12)


def test_baseline_is_largest_on_every_code_metric():
    metrics = {n: analyze(builtin(n), ROSTER) for n in BUILTIN_NAMES}
    base = metrics.pop("baseline")
    for other in metrics.values():
        assert base.vars_used > other.vars_used
        assert base.loc > other.loc
        assert base.volume > other.volume


def test_halstead_counts_small_program():
    m = analyze(parse("x = 2.0 * kp_dist\ntotal = x + x\n"), ROSTER)
    # operators: = * = +      operands: x 2.0 kp_dist total x x
    assert (m.halstead.n1, m.halstead.N1, m.halstead.n2, m.halstead.N2) == (3, 4, 4, 6)
    assert m.volume == pytest.approx(halstead_volume(4, 6, 3, 4))
    assert (m.vars_used, m.loc) == (1, 2)


def test_loc_ignores_blank_and_comment_lines():
    m = analyze(parse("# header\n\nx = kp_dist\n\n# note\ntotal = x\n"), ROSTER)
    assert m.loc == 2


@pytest.mark.parametrize("source, line, col", [
    ("total = (kp_dist\n", 2, 1),
    ("total = kp_dist +\n", 1, 18),
    ("x = 1\ntotal = x $ 2\n", 2, 11),
    ("total kp_dist\n", 1, 7),
])
def test_parse_errors_carry_position(source, line, col):
    with pytest.raises(ParseError) as info:
        parse(source)
    assert (info.value.line, info.value.col) == (line, col)


@pytest.mark.parametrize("source, fragment", [
    ("total = softplus(kp_dist)\n", "softplus"),
    ("total = not_a_field\n", "not_a_field"),
    ("x = kp_dist\n", "total"),
    ("kp_dist = 1.0\ntotal = kp_dist\n", "kp_dist"),
    ("total = clamp(kp_dist, 1.0)\n", "clamp"),
])
def test_parse_rejects_bad_programs(source, fragment):
    with pytest.raises(ParseError, match=fragment):
        parse(source)


def test_restricted_names_reject_bonus_fields():
    plain = set(roster(6, bonus_penalty=False))
    with pytest.raises(ParseError, match="success_bonus"):
        parse("total = success_bonus\n", names=plain)


@pytest.mark.parametrize("source", [
    "total = obj_base_pos - goal_base_pos\n",
    "total = active_pos + active_quat\n",
    "total = quat_mul(active_pos, active_quat)\n",
    "total = at(active_pos, 3)\n",
])
def test_shape_errors(source):
    with pytest.raises(ShapeError):
        check(parse(source), ROSTER)


def test_eval_fault_names_the_binding():
    program = parse("_d = norm(active_pos)\nbad = log(_d * 0.0)\ntotal = bad\n")
    obs = random_obs(np.random.default_rng(0), 4)
    with pytest.raises(EvalFault) as info:
        evaluate(program, obs)
    assert info.value.binding == "bad"


def test_internal_nonfinite_values_are_tolerated():
    program = parse("_inf = exp(1000.0)\ntotal = 1.0 / _inf\n")
    total, _ = evaluate(program, random_obs(np.random.default_rng(0), 3))
    assert total.tolist() == [0.0, 0.0, 0.0]


def test_components_exclude_underscore_names():
    program = parse("_a = kp_dist\nshaped = _a * 2.0\ntotal = shaped\n")
    _, comps = evaluate(program, random_obs(np.random.default_rng(0), 2))
    assert list(comps) == ["shaped"]


def test_unary_minus_binds_looser_than_power():
    total, _ = evaluate(parse("total = -2.0 ^ 2\n"), random_obs(np.random.default_rng(0), 1))
    assert total[0] == -4.0


def test_extract_code_block():
    text = "Here you go.\n```python\ntotal = kp_dist\n```\nand another\n```\nx = 1\n```"
    assert extract_code_block(text) == "total = kp_dist\n"
    with pytest.raises(ExtractError):
        extract_code_block("no code here")


@given(st.floats(-1e6, 1e6, allow_nan=False), st.floats(-1e6, 1e6, allow_nan=False))
def test_number_printing_round_trips(a, b):
    program = parse(f"total = {a!r} * kp_dist + {b!r}\n")
    assert parse(to_source(program)) == program


def test_builtin_sources_are_packaged():
    for name in BUILTIN_NAMES:
        assert "total" in builtin_source(name)
    with pytest.raises(KeyError):
        builtin_source("nope")


def test_vars_counts_distinct_observations():
    m = analyze(parse("a = norm(active_pos) + norm(active_pos)\ntotal = a + kp_dist\n"), ROSTER)
    assert m.vars_used == 2
    assert not math.isnan(m.volume)
