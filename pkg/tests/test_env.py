import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reward_forge import geom
from reward_forge.env import (
    ACTION_DIM, BONUS_PENALTY_NAMES, DEAD_NAMES, POLICY_OBS_DIM, PRIVILEGED_NAMES, EnvConfig, RotateEnv,
    consecutive_successes_update, roster,
)

from oracles import consecutive_successes


def _hold(n):
    a = np.zeros((n, ACTION_DIM))
    a[:, 3] = 1.0
    return a


def _spin(n):
    a = _hold(n)
    a[:, 2] = 1.0
    return a


def _quiet(**kw):
    return RotateEnv(EnvConfig(noise_std=0.0, **kw))


def test_roster_shapes_and_bonus_penalty_names():
    full = roster(6)
    assert full["active_kp"] == (6, 3)
    assert full["success_bonus"] == ()
    plain = roster(6, bonus_penalty=False)
    assert not set(BONUS_PENALTY_NAMES) & set(plain)
    assert roster(3)["obj_kp_positions"] == (3, 3)


def test_observation_batch_matches_roster():
    env = RotateEnv(EnvConfig(num_envs=5))
    obs = env.observe()
    for name, shape in roster(6).items():
        assert obs[name].shape == (5,) + shape, name


def test_dead_fields_are_zero_and_read_only():
    obs = RotateEnv(EnvConfig(num_envs=3)).observe()
    for name in DEAD_NAMES:
        assert not obs[name].any()
        with pytest.raises(ValueError):
            obs[name][...] = 1.0


def test_privileged_names_cover_pose_and_keypoints():
    for name in ("obj_base_pos", "obj_base_orn", "active_kp", "obj_base_angvel"):
        assert name in PRIVILEGED_NAMES


def test_policy_obs_dimension():
    assert RotateEnv(EnvConfig(num_envs=2)).policy_obs().shape == (2, POLICY_OBS_DIM)


def test_goal_advances_by_rot_increment_per_success():
    env = _quiet(num_envs=4, rot_increment=0.4)
    s = env.state
    s.obj_orn = s.goal_orn.copy()
    s.prev_obj_orn = s.obj_orn.copy()
    s.obj_angvel = np.zeros_like(s.obj_angvel)
    before = s.goal_orn.copy()
    result = env.step(_hold(4))
    assert result.goal_resets.all()
    after = env.state.goal_orn
    assert np.allclose(geom.rot_dist(after, before), 0.4, atol=1e-9)
    # the step is a rotation about the pivot axis
    step = geom.quat_mul(after, geom.quat_conjugate(before))
    assert np.allclose(geom.quat_rotate(step, np.tile(env.pivot, (4, 1))), env.pivot, atol=1e-9)
    assert env.state.successes.tolist() == [1, 1, 1, 1]


def test_goal_unchanged_without_success():
    env = _quiet(num_envs=3)
    before = env.state.goal_orn.copy()
    result = env.step(_hold(3))
    assert not result.goal_resets.any()
    assert np.array_equal(env.state.goal_orn, before)


@given(st.integers(1, 5))
def test_success_count_matches_goal_advances(k):
    env = _quiet(num_envs=1, rot_increment=0.3)
    start = env.state.goal_orn.copy()
    for _ in range(k):
        env.state.obj_orn = env.state.goal_orn.copy()
        env.state.prev_obj_orn = env.state.obj_orn.copy()
        env.state.obj_angvel = np.zeros((1, 3))
        env.step(_hold(1))
    assert env.state.successes[0] == k
    assert geom.rot_dist(env.state.goal_orn, start)[0] == pytest.approx((0.3 * k) % (2 * math.pi), abs=1e-9)


def test_consecutive_successes_formula_on_random_triples():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        n = int(rng.integers(1, 16))
        resets = rng.random(n) < rng.random()
        successes = rng.integers(0, 50, n)
        av = float(rng.uniform(1e-3, 1.0))
        prev = float(rng.uniform(0, 100))
        got = consecutive_successes_update(prev, resets, successes, av)
        assert got == pytest.approx(consecutive_successes(prev, resets, successes, av), abs=1e-12)


def test_consecutive_successes_keeps_prior_without_resets():
    assert consecutive_successes_update(3.5, [False, False], [9, 9], 0.1) == 3.5


def test_episode_hard_stop_at_600_steps_is_30_seconds():
    cfg = EnvConfig(num_envs=2, noise_std=0.0)
    env = RotateEnv(cfg)
    for _ in range(599):
        env.step(_hold(2))
    assert not env.finished
    result = env.step(_hold(2))
    assert result.resets.all()
    assert [r.length for r in env.finished] == [600, 600]
    assert 600 * cfg.dt == pytest.approx(30.0)


def test_reset_clears_episode_state():
    env = _quiet(num_envs=2, max_episode_steps=3)
    for _ in range(3):
        env.step(_spin(2))
    s = env.state
    assert s.progress.tolist() == [0, 0]
    assert s.successes.tolist() == [0, 0]
    assert not s.prev_action.any()


def test_letting_go_drops_the_object():
    env = RotateEnv(EnvConfig(num_envs=8, seed=3))
    for _ in range(200):
        env.step(np.zeros((8, ACTION_DIM)))
    lengths = [r.length for r in env.finished]
    assert lengths and max(lengths) < 600


def test_constant_spin_rotates_about_pivot():
    env = _quiet(num_envs=4)
    for _ in range(600):
        env.step(_spin(4))
    rec = env.finished[:4]
    assert all(r.successes > 100 for r in rec)
    assert all(r.rotations > 5 for r in rec)


def test_failed_success_marks_bonus_and_penalty_fields():
    env = _quiet(num_envs=2)
    env.state.obj_pos_offset = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.05]])
    obs = env.observe()
    assert obs["early_reset_penalty_value"].tolist() == [0.0, 1.0]
    assert obs["success_bonus"].tolist() == [0.0, 0.0]


def test_step_rejects_bad_actions():
    env = RotateEnv(EnvConfig(num_envs=2))
    with pytest.raises(ValueError):
        env.step(np.zeros((3, ACTION_DIM)))
    bad = np.zeros((2, ACTION_DIM))
    bad[1, 0] = np.nan
    with pytest.raises(ValueError, match="env 1"):
        env.step(bad)


def test_reset_rejects_out_of_range_ids():
    env = RotateEnv(EnvConfig(num_envs=2))
    with pytest.raises(IndexError):
        env.reset([2])


def test_same_seed_same_trajectory():
    def run():
        env = RotateEnv(EnvConfig(num_envs=4, seed=11))
        rng = np.random.default_rng(0)
        for _ in range(50):
            env.step(rng.uniform(-1, 1, (4, ACTION_DIM)))
        return env.state.obj_orn, [(r.length, r.successes) for r in env.finished]

    (q1, f1), (q2, f2) = run(), run()
    assert np.array_equal(q1, q2) and f1 == f2


def test_earlier_observations_do_not_change():
    env = RotateEnv(EnvConfig(num_envs=2, max_episode_steps=2))
    obs = env.observe()
    snapshot = obs["obj_base_orn"].copy()
    for _ in range(3):
        env.step(_spin(2))
    assert np.array_equal(obs["obj_base_orn"], snapshot)


@pytest.mark.parametrize("kw", [
    {"num_envs": 0}, {"av_factor": 0.0}, {"rot_increment": 4.0}, {"max_episode_steps": 0},
    {"kp_dist": -1.0}, {"n_keypoints": 99}, {"pivot_axis": (0, 0, 0)}, {"damping": float("nan")},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        EnvConfig(**kw)


def test_success_tolerance_follows_goal_dtol():
    cfg = EnvConfig()
    assert cfg.success_tolerance == pytest.approx(0.15 * 0.03)
    assert cfg.replace(goal_dtol=0.25).success_tolerance == pytest.approx(0.25 * 0.03)
    assert cfg.replace(goal_dtol=0.25).fall_reset_dist == cfg.fall_reset_dist
