"""Vectorised kinematic surrogate of the sub-goal in-hand rotation task.

The hand is abstracted into a 4-DoF rotor: three torque channels drive the
object's angular velocity and one grip channel holds it. Everything a reward
program can look at (keypoints, contacts, drop risk, axis deviation, the
success bonus and early-reset penalty) is derived from that small state.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import geom

N_TIPS = 4
ACTION_DIM = 4
HAND_POS = np.array([0.0, 0.0, 0.5])
#: object position noise, metres per unit of ``noise_std``
POS_NOISE_SCALE = 0.01


@dataclass
class EnvConfig:
    num_envs: int = 64
    dt: float = 0.05
    max_episode_steps: int = 600
    kp_dist: float = 0.03
    n_keypoints: int = 6
    # goal-update tolerance expressed in units of kp_dist; success_tolerance
    # (metres) is derived from it unless given explicitly
    goal_dtol: float = 0.15
    success_tolerance: float | None = None
    fall_reset_dist: float | None = None
    axis_deviat_reset_dist: float = 0.5
    rot_increment: float = 0.4
    reach_goal_bonus: float = 1.0
    early_reset_penalty: float = 1.0
    av_factor: float = 0.1
    pivot_axis: tuple = (0.0, 0.0, 1.0)
    torque_gain: float = 0.25
    damping: float = 0.9
    grip_gain: float = 0.1
    grip_decay: float = 0.01
    drift_gain: float = 0.05
    noise_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        self.pivot_axis = tuple(float(c) for c in self.pivot_axis)
        if self.success_tolerance is None:
            self.success_tolerance = self.goal_dtol * self.kp_dist
        if self.fall_reset_dist is None:
            # four teacher tolerances, independent of any relaxed goal_dtol
            self.fall_reset_dist = 4.0 * 0.15 * self.kp_dist
        self.validate()

    def validate(self):
        if self.num_envs < 1:
            raise ValueError("num_envs must be >= 1")
        if not 0.0 < self.av_factor <= 1.0:
            raise ValueError("av_factor must lie in (0, 1]")
        if not 0.0 < self.rot_increment <= math.pi:
            raise ValueError("rot_increment must lie in (0, pi]")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")
        if self.kp_dist <= 0 or self.n_keypoints < 1:
            raise ValueError("kp_dist and n_keypoints must be positive")
        if self.n_keypoints > len(geom.DEFAULT_KP_BASIS):
            raise ValueError(f"at most {len(geom.DEFAULT_KP_BASIS)} keypoints supported")
        if self.success_tolerance <= 0 or self.fall_reset_dist <= 0:
            raise ValueError("tolerances must be positive")
        gains = (self.torque_gain, self.damping, self.grip_gain, self.grip_decay,
                 self.drift_gain, self.noise_std, self.dt)
        if not all(math.isfinite(g) for g in gains):
            raise ValueError("dynamics gains must be finite")
        if np.linalg.norm(self.pivot_axis) == 0.0:
            raise ValueError("pivot_axis must be non-zero")

    def replace(self, **changes) -> "EnvConfig":
        data = dataclasses.asdict(self)
        if "goal_dtol" in changes and "success_tolerance" not in changes:
            data["success_tolerance"] = None
        data.update(changes)
        return EnvConfig(**data)


# --------------------------------------------------------------------------
# observation roster
# --------------------------------------------------------------------------

#: names offered to LLMs that only exist in the bonus/penalty prompt variants
BONUS_PENALTY_NAMES = ("success_bonus", "early_reset_penalty_value")

_K = "K"  # placeholder for n_keypoints in roster shapes

_ROSTER_SPEC = [
    ("contact_pose_range_sim", (2,)),
    ("base_hand_pos", (3,)),
    ("base_hand_orn", (4,)),
    ("kp_dist", ()),
    ("n_keypoints", ()),
    ("obj_kp_positions", (_K, 3)),
    ("goal_kp_positions", (_K, 3)),
    ("kp_basis_vecs", (_K, 3)),
    ("fingertip_pos_handframe", (N_TIPS, 3)),
    ("fingertip_orn_handframe", (N_TIPS, 4)),
    ("thumb_tip_name_idx", ()),
    ("index_tip_name_idx", ()),
    ("middle_tip_name_idx", ()),
    ("pinky_tip_name_idx", ()),
    ("n_tips", ()),
    ("contact_positions", (N_TIPS, 3)),
    ("contact_positions_worldframe", (N_TIPS, 3)),
    ("contact_positions_tcpframe", (N_TIPS, 3)),
    ("sim_contact_pose_limits", (2,)),
    ("contact_threshold_limit", ()),
    ("obj_indices", ()),
    ("goal_indices", ()),
    ("default_obj_pos_handframe", (3,)),
    ("prev_obj_orn", (4,)),
    ("goal_displacement_tensor", (3,)),
    ("root_state_tensor", (13,)),
    ("dof_pos", (16,)),
    ("dof_vel", (16,)),
    ("rigid_body_tensor", (13,)),
    ("current_force_apply_axis", (3,)),
    ("obj_force_vector", (3,)),
    ("pivot_axel_worldframe", (3,)),
    ("pivot_axel_objframe", (3,)),
    ("goal_base_pos", (3,)),
    ("goal_base_orn", (4,)),
    ("net_tip_contact_forces", (N_TIPS, 3)),
    ("net_tip_contact_force_mags", (N_TIPS,)),
    ("tip_object_contacts", (N_TIPS,)),
    ("n_tip_contacts", ()),
    ("n_non_tip_contacts", ()),
    ("thumb_tip_contacts", ()),
    ("index_tip_contacts", ()),
    ("middle_tip_contacts", ()),
    ("pinky_tip_contacts", ()),
    ("fingertip_pos", (N_TIPS, 3)),
    ("fingertip_orn", (N_TIPS, 4)),
    ("fingertip_linvel", (N_TIPS, 3)),
    ("fingertip_angvel", (N_TIPS, 3)),
    ("tip_contact_force_pose", (N_TIPS, 2)),
    ("tip_contact_force_pose_low_dim", (N_TIPS, 2)),
    ("tip_contact_force_pose_bins", (N_TIPS, 2)),
    ("n_good_contacts", ()),
    ("hand_joint_pos", (16,)),
    ("hand_joint_vel", (16,)),
    ("obj_base_pos", (3,)),
    ("obj_base_orn", (4,)),
    ("obj_pos_handframe", (3,)),
    ("obj_orn_handframe", (4,)),
    ("obj_displacement_tensor", (3,)),
    ("obj_pos_centered", (3,)),
    ("delta_obj_orn", (4,)),
    ("obj_base_linvel", (3,)),
    ("obj_base_angvel", (3,)),
    ("obj_linvel_handframe", (3,)),
    ("obj_angvel_handframe", (3,)),
    ("goal_pos_centered", (3,)),
    ("goal_pos_handframe", (3,)),
    ("goal_orn_handframe", (4,)),
    ("active_pos", (3,)),
    ("active_quat", (4,)),
    ("obj_kp_positions_centered", (_K, 3)),
    ("goal_kp_positions_centered", (_K, 3)),
    ("active_kp", (_K, 3)),
    ("obj_force_vector_handframe", (3,)),
]

#: roster names the surrogate has no analogue for; always zero
DEAD_NAMES = frozenset({
    "contact_pose_range_sim", "fingertip_pos_handframe", "fingertip_orn_handframe",
    "contact_positions", "contact_positions_worldframe", "contact_positions_tcpframe",
    "sim_contact_pose_limits", "contact_threshold_limit", "obj_indices", "goal_indices",
    "default_obj_pos_handframe", "root_state_tensor", "dof_pos", "dof_vel",
    "rigid_body_tensor", "net_tip_contact_forces", "fingertip_pos", "fingertip_orn",
    "fingertip_linvel", "fingertip_angvel", "tip_contact_force_pose",
    "tip_contact_force_pose_low_dim", "tip_contact_force_pose_bins",
    "hand_joint_pos", "hand_joint_vel",
})

#: fields carrying object pose, velocity or keypoint information
PRIVILEGED_NAMES = frozenset({
    "obj_kp_positions", "goal_kp_positions", "prev_obj_orn", "goal_base_pos", "goal_base_orn",
    "obj_base_pos", "obj_base_orn", "obj_pos_handframe", "obj_orn_handframe", "obj_pos_centered",
    "delta_obj_orn", "obj_base_linvel", "obj_base_angvel", "obj_linvel_handframe",
    "obj_angvel_handframe", "goal_pos_centered", "goal_pos_handframe", "goal_orn_handframe",
    "active_pos", "active_quat", "obj_kp_positions_centered", "goal_kp_positions_centered",
    "active_kp", "pivot_axel_objframe", "success_bonus", "early_reset_penalty_value",
})


def roster(n_keypoints: int = 6, bonus_penalty: bool = True) -> dict[str, tuple]:
    """Name -> per-env shape map of every observation a reward may reference."""
    names = list(BONUS_PENALTY_NAMES) if bonus_penalty else []
    out = {n: () for n in names}
    for name, shape in _ROSTER_SPEC:
        out[name] = tuple(n_keypoints if d == _K else d for d in shape)
    return out


class ObsBatch(dict):
    """Named per-env observation arrays; ``obs[name]`` has shape ``(num_envs, *shape)``."""

    @property
    def num_envs(self) -> int:
        return len(next(iter(self.values())))

    def without(self, names) -> "ObsBatch":
        drop = set(names)
        return ObsBatch({k: v for k, v in self.items() if k not in drop})

    def row(self, i: int) -> dict[str, np.ndarray]:
        return {k: v[i] for k, v in self.items()}


@dataclass
class EnvState:
    obj_orn: np.ndarray
    obj_angvel: np.ndarray
    obj_pos_offset: np.ndarray
    prev_pos_offset: np.ndarray
    grip: np.ndarray
    goal_orn: np.ndarray
    prev_obj_orn: np.ndarray
    pivot_objframe: np.ndarray
    gravity: np.ndarray
    prev_action: np.ndarray
    progress: np.ndarray
    successes: np.ndarray
    rotation_counts: np.ndarray
    consecutive_successes: float = 0.0


@dataclass
class StepResult:
    obs: ObsBatch
    resets: np.ndarray
    goal_resets: np.ndarray
    metrics: dict = field(default_factory=dict)


@dataclass
class EpisodeRecord:
    env_id: int
    length: int
    successes: int
    rotations: float


class RotateEnv:
    """Batch of ``num_envs`` independent rotor environments sharing one config."""

    def __init__(self, cfg: EnvConfig | None = None):
        self.cfg = cfg or EnvConfig()
        c = self.cfg
        self.num_envs = c.num_envs
        self.rng = np.random.default_rng(c.seed)
        self.pivot = np.asarray(c.pivot_axis, dtype=float) / np.linalg.norm(c.pivot_axis)
        self.kp_basis = geom.DEFAULT_KP_BASIS[: c.n_keypoints]
        self.shapes = roster(c.n_keypoints)
        n = self.num_envs
        self._zeros = {}
        for name in DEAD_NAMES:
            arr = np.zeros((n,) + self.shapes[name])
            arr.flags.writeable = False
            self._zeros[name] = arr
        self._consts = self._constant_fields()
        self.state = EnvState(
            obj_orn=np.tile(geom.IDENTITY, (n, 1)),
            obj_angvel=np.zeros((n, 3)),
            obj_pos_offset=np.zeros((n, 3)),
            prev_pos_offset=np.zeros((n, 3)),
            grip=np.ones(n),
            goal_orn=np.tile(geom.IDENTITY, (n, 1)),
            prev_obj_orn=np.tile(geom.IDENTITY, (n, 1)),
            pivot_objframe=np.tile(self.pivot, (n, 1)),
            gravity=np.tile([0.0, 0.0, -1.0], (n, 1)),
            prev_action=np.zeros((n, ACTION_DIM)),
            progress=np.zeros(n, dtype=np.int64),
            successes=np.zeros(n, dtype=np.int64),
            rotation_counts=np.zeros(n),
        )
        self._rot_step = geom.quat_from_axis_angle(self.pivot, c.rot_increment)
        self._tip_index = np.arange(N_TIPS)[None, :]
        self._pivot_rows = np.tile(self.pivot, (n, 1))
        self._goal_kp = None
        self.finished: list[EpisodeRecord] = []
        self.reset(np.arange(n))

    # -- bookkeeping ------------------------------------------------------

    def _constant_fields(self) -> dict:
        n, c = self.num_envs, self.cfg
        consts = {
            "kp_dist": np.full(n, c.kp_dist),
            "n_keypoints": np.full(n, float(c.n_keypoints)),
            "n_tips": np.full(n, float(N_TIPS)),
            "thumb_tip_name_idx": np.zeros(n),
            "index_tip_name_idx": np.ones(n),
            "middle_tip_name_idx": np.full(n, 2.0),
            "pinky_tip_name_idx": np.full(n, 3.0),
            "kp_basis_vecs": np.tile(self.kp_basis, (n, 1, 1)),
            "base_hand_pos": np.tile(HAND_POS, (n, 1)),
            "base_hand_orn": np.tile(geom.IDENTITY, (n, 1)),
            "obj_displacement_tensor": np.tile(HAND_POS, (n, 1)),
            "goal_displacement_tensor": np.tile(HAND_POS, (n, 1)),
            "goal_base_pos": np.tile(HAND_POS, (n, 1)),
            "goal_pos_centered": np.zeros((n, 3)),
            "goal_pos_handframe": np.zeros((n, 3)),
            "pivot_axel_worldframe": np.tile(self.pivot, (n, 1)),
        }
        for arr in consts.values():
            arr.flags.writeable = False
        return consts

    def reset(self, env_ids) -> ObsBatch:
        ids = np.asarray(env_ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= self.num_envs):
            raise IndexError(f"env ids out of range [0, {self.num_envs}): {ids.tolist()}")
        self._reset_ids(ids)
        return self.observe()

    def _reset_ids(self, ids):
        # state arrays are copied before partial writes so that observation
        # batches handed out earlier never change underneath their holders
        s, c, m = self.state, self.cfg, len(ids)
        if not m:
            return
        orn = geom.random_quat(self.rng, m)
        goal = geom.canonicalize(geom.quat_mul(self._rot_step, orn))
        offset = POS_NOISE_SCALE * c.noise_std * self.rng.standard_normal((m, 3))
        sign = np.where(self.rng.random(m) < 0.5, -1.0, 1.0)
        updates = {
            "obj_orn": orn,
            "prev_obj_orn": orn,
            "goal_orn": goal,
            "pivot_objframe": geom.quat_rotate_inverse(orn, self.pivot),
            "obj_angvel": c.noise_std * self.rng.standard_normal((m, 3)),
            "obj_pos_offset": offset,
            "prev_pos_offset": offset,
            "grip": 1.0,
            "gravity": np.outer(sign, [0.0, 0.0, 1.0]),
            "prev_action": 0.0,
            "progress": 0,
            "successes": 0,
            "rotation_counts": 0.0,
        }
        for name, value in updates.items():
            arr = getattr(s, name).copy()
            arr[ids] = value
            setattr(s, name, arr)
        self._refresh_goal_kp(ids)

    def _refresh_goal_kp(self, ids=None):
        s = self.state
        if ids is None or getattr(self, "_goal_kp", None) is None:
            self._goal_kp = geom.keypoints(np.broadcast_to(HAND_POS, (self.num_envs, 3)), s.goal_orn,
                                           self.kp_basis, self.cfg.kp_dist)
            return
        kp = self._goal_kp.copy()
        kp[ids] = geom.keypoints(np.broadcast_to(HAND_POS, (len(ids), 3)), s.goal_orn[ids],
                                 self.kp_basis, self.cfg.kp_dist)
        self._goal_kp = kp

    # -- derived quantities -----------------------------------------------

    def current_pivot(self) -> np.ndarray:
        return geom.quat_rotate(self.state.obj_orn, self.state.pivot_objframe)

    def active_quat(self) -> np.ndarray:
        s = self.state
        return geom.canonicalize(geom.quat_mul(s.obj_orn, geom.quat_conjugate(s.goal_orn)))

    def contacts(self):
        s = self.state
        n_tip = np.rint(N_TIPS * s.grip)
        dev = geom.axis_deviation(self.pivot, self.current_pivot())
        align = np.clip(1.0 - dev / self.cfg.axis_deviat_reset_dist, 0.0, 1.0)
        n_good = np.rint(N_TIPS * s.grip * align)
        n_non_tip = np.rint(2.0 * (1.0 - s.grip))
        tips = (self._tip_index < n_tip[:, None]).astype(float)
        return tips, n_tip, n_good, n_non_tip, dev

    def keypoint_sets(self):
        s = self.state
        obj_kp = geom.keypoints(HAND_POS + s.obj_pos_offset, s.obj_orn, self.kp_basis, self.cfg.kp_dist)
        return obj_kp, self._goal_kp

    def observe(self) -> ObsBatch:
        return self._observe()[0]

    def _observe(self):
        s, c = self.state, self.cfg
        obs = ObsBatch(self._zeros)
        obs.update(self._consts)
        obj_kp, goal_kp = self.keypoint_sets()
        tips, n_tip, n_good, n_non_tip, dev = self.contacts()
        obj_kp_c = obj_kp - HAND_POS
        goal_kp_c = goal_kp - HAND_POS
        active_kp = obj_kp_c - goal_kp_c
        mean_kp = np.sqrt(np.sum(active_kp * active_kp, axis=-1)).mean(axis=-1)
        bonus, penalty, goal_resets, resets = self.compute_success_and_termination(mean_kp, dev, n_tip)

        linvel = (s.obj_pos_offset - s.prev_pos_offset) / c.dt
        delta = geom.canonicalize(geom.quat_mul(s.obj_orn, geom.quat_conjugate(s.prev_obj_orn)))
        self._active_quat = self.active_quat()
        obs.update(
            success_bonus=bonus,
            early_reset_penalty_value=penalty,
            obj_kp_positions=obj_kp,
            goal_kp_positions=goal_kp,
            prev_obj_orn=s.prev_obj_orn,
            current_force_apply_axis=s.gravity,
            obj_force_vector=s.gravity,
            obj_force_vector_handframe=s.gravity,
            pivot_axel_objframe=s.pivot_objframe,
            goal_base_orn=s.goal_orn,
            goal_orn_handframe=s.goal_orn,
            net_tip_contact_force_mags=tips * s.grip[:, None],
            tip_object_contacts=tips,
            n_tip_contacts=n_tip,
            n_non_tip_contacts=n_non_tip,
            thumb_tip_contacts=tips[:, 0],
            index_tip_contacts=tips[:, 1],
            middle_tip_contacts=tips[:, 2],
            pinky_tip_contacts=tips[:, 3],
            n_good_contacts=n_good,
            obj_base_pos=HAND_POS + s.obj_pos_offset,
            obj_base_orn=s.obj_orn,
            obj_pos_handframe=s.obj_pos_offset,
            obj_orn_handframe=s.obj_orn,
            obj_pos_centered=s.obj_pos_offset,
            delta_obj_orn=delta,
            obj_base_linvel=linvel,
            obj_base_angvel=s.obj_angvel,
            obj_linvel_handframe=linvel,
            obj_angvel_handframe=s.obj_angvel,
            active_pos=s.obj_pos_offset,
            active_quat=self._active_quat,
            obj_kp_positions_centered=obj_kp_c,
            goal_kp_positions_centered=goal_kp_c,
            active_kp=active_kp,
        )
        return obs, goal_resets, resets

    def compute_success_and_termination(self, mean_kp, axis_dev, n_tip):
        """Success bonus, early-reset penalty, goal-reset and reset masks."""
        c = self.cfg
        goal_resets = mean_kp <= c.success_tolerance
        early = (mean_kp >= c.fall_reset_dist) | (axis_dev >= c.axis_deviat_reset_dist) | (n_tip == 0)
        bonus = np.where(goal_resets, c.reach_goal_bonus, 0.0)
        penalty = np.where(early, c.early_reset_penalty, 0.0)
        resets = early | (self.state.progress >= c.max_episode_steps)
        return bonus, penalty, goal_resets, resets

    # -- dynamics ---------------------------------------------------------

    def step(self, actions) -> StepResult:
        a = np.asarray(actions, dtype=float)
        if a.shape != (self.num_envs, ACTION_DIM):
            raise ValueError(f"actions must have shape ({self.num_envs}, {ACTION_DIM}), got {a.shape}")
        bad = ~np.isfinite(a).all(axis=1)
        if bad.any():
            raise ValueError(f"non-finite action for env {int(np.flatnonzero(bad)[0])}")
        a = np.clip(a, -1.0, 1.0)
        s, c, n = self.state, self.cfg, self.num_envs

        omega = c.damping * s.obj_angvel + c.torque_gain * a[:, :3]
        if c.noise_std > 0:
            omega = omega + c.noise_std * self.rng.standard_normal((n, 3))
        s.obj_angvel = omega
        s.obj_orn = geom.integrate(s.obj_orn, omega, c.dt)
        s.grip = np.clip(s.grip + c.grip_gain * a[:, 3] - c.grip_decay, 0.0, 1.0)
        s.prev_pos_offset = s.obj_pos_offset
        drift = c.drift_gain * (1.0 - s.grip)[:, None] * s.gravity * c.dt
        if c.noise_std > 0:
            drift = drift + POS_NOISE_SCALE * c.noise_std * c.dt * self.rng.standard_normal((n, 3))
        s.obj_pos_offset = s.obj_pos_offset + drift
        s.progress = s.progress + 1

        obs, goal_resets, resets = self._observe()

        self.update_goal_on_success(goal_resets)
        self.update_consecutive_successes(resets, s.successes)
        self.update_rotation_counts()
        s.prev_action = a

        done = np.flatnonzero(resets)
        finished = [
            EpisodeRecord(int(i), int(s.progress[i]), int(s.successes[i]), float(s.rotation_counts[i]))
            for i in done
        ]
        self.finished.extend(finished)
        metrics = {"task_score": s.consecutive_successes, "finished": finished}
        if done.size:
            self._reset_ids(done)
        return StepResult(obs=obs, resets=resets, goal_resets=goal_resets, metrics=metrics)

    def update_goal_on_success(self, goal_resets):
        """Advance each successful env's goal by one increment about the pivot."""
        s = self.state
        ids = np.flatnonzero(goal_resets)
        if ids.size:
            goal = s.goal_orn.copy()
            goal[ids] = geom.canonicalize(geom.quat_mul(self._rot_step, goal[ids]))
            s.goal_orn = goal
            s.successes = s.successes + np.asarray(goal_resets, dtype=np.int64)
            self._refresh_goal_kp(ids)

    def update_consecutive_successes(self, resets, successes) -> float:
        s = self.state
        s.consecutive_successes = consecutive_successes_update(
            s.consecutive_successes, resets, successes, self.cfg.av_factor)
        return s.consecutive_successes

    def update_rotation_counts(self):
        s = self.state
        rpy = geom.euler_xyz_delta(s.obj_orn, s.prev_obj_orn)
        s.rotation_counts = s.rotation_counts + (rpy @ self.pivot) / (2.0 * math.pi)
        s.prev_obj_orn = s.obj_orn

    # -- policy inputs ----------------------------------------------------

    def policy_obs(self) -> np.ndarray:
        """Privileged feature vector the teacher policy acts on."""
        s, c = self.state, self.cfg
        tips = (self._tip_index < np.rint(N_TIPS * s.grip)[:, None]).astype(float)
        return np.concatenate(
            [
                self.active_quat(),
                s.obj_angvel / 2.5,
                s.obj_pos_offset / c.kp_dist,
                self.current_pivot(),
                self._pivot_rows,
                s.grip[:, None],
                s.gravity,
                tips,
                s.prev_action,
            ],
            axis=1,
        )


POLICY_OBS_DIM = 4 + 3 + 3 + 3 + 3 + 1 + 3 + N_TIPS + ACTION_DIM


def consecutive_successes_update(prev: float, resets, successes, av_factor: float) -> float:
    """Blend mean successes of the resetting envs into the running metric."""
    resets = np.asarray(resets, dtype=bool)
    num_resets = int(resets.sum())
    if num_resets == 0:
        return float(prev)
    finished = float(np.sum(np.asarray(successes, dtype=float) * resets))
    return float(av_factor * finished / num_resets + (1.0 - av_factor) * prev)
