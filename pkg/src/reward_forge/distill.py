"""Teacher-student distillation onto contact and proprioceptive inputs.

The student sees fingertip contacts, a grip proxy, its previous action, the
commanded pivot axis and the gravity direction, stacked over a short history.
It is fitted to the teacher's actions by mean-squared regression.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import ACTION_DIM, PRIVILEGED_NAMES, EnvConfig, RotateEnv
from .ppo import MLP, Adam, EvalReport, Policy, report_from_episodes

#: (observation name, width) of each student frame, in order
STUDENT_FIELDS = (
    ("tip_object_contacts", 4),
    ("n_tip_contacts", 1),
    ("net_tip_contact_force_mags", 4),
    ("pivot_axel_worldframe", 3),
    ("current_force_apply_axis", 3),
)
STUDENT_FORMAT = "reward-forge-student"
DATASET_FORMAT = "reward-forge-dataset"


@dataclass(frozen=True)
class StudentObsSpec:
    fields: tuple = STUDENT_FIELDS
    history: int = 5

    def __post_init__(self):
        leaked = {name for name, _ in self.fields} & PRIVILEGED_NAMES
        if leaked:
            raise ValueError(f"student inputs may not include privileged fields: {sorted(leaked)}")
        if self.history < 1:
            raise ValueError("history must be >= 1")

    @property
    def frame_dim(self) -> int:
        # observation fields plus the previous action
        return sum(w for _, w in self.fields) + ACTION_DIM

    @property
    def input_dim(self) -> int:
        return self.frame_dim * self.history

    def action_mask(self) -> np.ndarray:
        """Boolean mask over the flattened input picking out the previous-action slots."""
        mask = np.zeros(self.input_dim, dtype=bool)
        for h in range(1, self.history + 1):
            mask[h * self.frame_dim - ACTION_DIM:h * self.frame_dim] = True
        return mask

    def frame(self, obs, prev_action) -> np.ndarray:
        """One frame per env from an observation batch and the last applied action."""
        n = len(prev_action)
        parts = [np.asarray(obs[name], dtype=float).reshape(n, w) for name, w in self.fields]
        parts.append(np.asarray(prev_action, dtype=float))
        return np.concatenate(parts, axis=1)


class History:
    """Rolling per-env frame stack, oldest first; cleared envs restart from zeros."""

    def __init__(self, num_envs: int, spec: StudentObsSpec):
        self.spec = spec
        self.buf = np.zeros((num_envs, spec.history, spec.frame_dim))

    def clear(self, mask):
        self.buf[np.asarray(mask, dtype=bool)] = 0.0

    def push(self, frame) -> np.ndarray:
        self.buf = np.concatenate([self.buf[:, 1:], frame[:, None, :]], axis=1)
        return self.flat()

    def flat(self) -> np.ndarray:
        return self.buf.reshape(len(self.buf), -1)


@dataclass
class DistillConfig:
    dataset_size: int = 50_000
    epochs: int = 40
    batch_size: int = 256
    learning_rate: float = 3e-4
    hidden: tuple = (256, 256)
    val_fraction: float = 0.1
    teacher_dtol: float = 0.15
    student_dtol: float = 0.25
    prev_action_noise: float = 0.1  # keeps the student from leaning on its own fed-back actions
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.teacher_dtol <= 0 or self.student_dtol <= 0:
            raise ValueError("goal tolerances must be positive")
        if self.student_dtol < self.teacher_dtol:
            raise ValueError("student tolerance must be at least the teacher tolerance")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.prev_action_noise < 0:
            raise ValueError("prev_action_noise must be >= 0")


@dataclass
class Dataset:
    inputs: np.ndarray   # (n, history * frame_dim)
    actions: np.ndarray  # (n, ACTION_DIM)
    spec: StudentObsSpec = field(default_factory=StudentObsSpec)

    def __len__(self):
        return len(self.inputs)

    def save(self, path):
        header = json.dumps({"format": DATASET_FORMAT, "history": self.spec.history,
                             "fields": [list(f) for f in self.spec.fields],
                             "input_dim": self.spec.input_dim, "action_dim": ACTION_DIM})
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(header), inputs=self.inputs, actions=self.actions)

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as data:
            header = json.loads(str(data["header"]))
            if header.get("format") != DATASET_FORMAT:
                raise ValueError(f"{path} is not a distillation dataset")
            spec = StudentObsSpec(tuple((n, w) for n, w in header["fields"]), header["history"])
            return cls(data["inputs"], data["actions"], spec)


def _teacher_env(env_cfg: EnvConfig, dtol: float) -> RotateEnv:
    return RotateEnv(env_cfg.replace(goal_dtol=dtol))


def collect_teacher_dataset(teacher: Policy, env_cfg: EnvConfig, n: int,
                            spec: StudentObsSpec | None = None, dtol: float = 0.15) -> Dataset:
    """Roll out the teacher's greedy actions and record (student history, teacher action) pairs."""
    spec = spec or StudentObsSpec()
    env = _teacher_env(env_cfg, dtol)
    hist = History(env.num_envs, spec)
    prev = np.zeros((env.num_envs, ACTION_DIM))
    xs, ys = [], []
    count = 0
    obs = env.observe()
    while count < n:
        x = hist.push(spec.frame(obs, prev))
        a = teacher.act(env.policy_obs())
        xs.append(x)
        ys.append(a)
        count += len(x)
        result = env.step(a)
        prev = np.where(result.resets[:, None], 0.0, a)
        hist.clear(result.resets)
        obs = env.observe()
    return Dataset(np.concatenate(xs)[:n], np.concatenate(ys)[:n].astype(float), spec)


class Student:
    """MLP from a flattened frame history to an action."""

    def __init__(self, spec: StudentObsSpec, hidden=(256, 256), rng=None):
        self.spec = spec
        self.hidden = tuple(hidden)
        self.net = MLP((spec.input_dim, *self.hidden, ACTION_DIM), rng, out_scale=0.1)
        self.in_mean = np.zeros(spec.input_dim)
        self.in_std = np.ones(spec.input_dim)

    def forward(self, x):
        return self.net.forward((x - self.in_mean) / self.in_std)

    def predict(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def act(self, x) -> np.ndarray:
        return np.clip(self.predict(x), -1.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "format": STUDENT_FORMAT, "version": 1,
            "history": self.spec.history, "fields": [list(f) for f in self.spec.fields],
            "hidden": list(self.hidden),
            "params": [p.tolist() for p in self.net.params],
            "in_mean": self.in_mean.tolist(), "in_std": self.in_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Student":
        if d.get("format") != STUDENT_FORMAT:
            raise ValueError("not a student policy file")
        spec = StudentObsSpec(tuple((n, w) for n, w in d["fields"]), d["history"])
        s = cls(spec, d["hidden"])
        s.net.params = [np.asarray(p, dtype=float) for p in d["params"]]
        s.in_mean = np.asarray(d["in_mean"], dtype=float)
        s.in_std = np.asarray(d["in_std"], dtype=float)
        return s

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Student":
        return cls.from_dict(json.loads(Path(path).read_text()))


def regression_loss(student: Student, x, y):
    """Mean over samples of the squared action distance, and its parameter gradients."""
    pred, cache = student.forward(x)
    diff = pred - y
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    grads = student.net.backward(cache, 2.0 * diff / len(x))
    return loss, grads


@dataclass
class StudentTraining:
    train_loss: list
    val_loss: list
    val_action_rms: float

    def to_dict(self) -> dict:
        return asdict(self)


def action_rms(student: Student, x, y) -> float:
    """Root mean square difference between clipped student actions and the targets."""
    return float(np.sqrt(np.mean((student.act(x) - y) ** 2)))


def train_student(dataset: Dataset, cfg: DistillConfig | None = None) -> tuple[Student, StudentTraining]:
    cfg = cfg or DistillConfig()
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(dataset))
    n_val = max(1, int(round(cfg.val_fraction * len(dataset)))) if len(dataset) > 1 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    x, y = dataset.inputs[train_idx], dataset.actions[train_idx]
    xv, yv = dataset.inputs[val_idx], dataset.actions[val_idx]

    student = Student(dataset.spec, cfg.hidden, rng)
    student.in_mean = x.mean(axis=0)
    student.in_std = np.where(x.std(axis=0) > 1e-6, x.std(axis=0), 1.0)
    opt = Adam(student.net.params)
    train_curve, val_curve = [], []
    bs = min(cfg.batch_size, len(x))
    mask = dataset.spec.action_mask()
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(x))
        total, batches = 0.0, 0
        for start in range(0, len(x), bs):
            idx = perm[start:start + bs]
            xb = x[idx]
            if cfg.prev_action_noise > 0:
                xb = xb.copy()
                xb[:, mask] += cfg.prev_action_noise * rng.standard_normal((len(idx), int(mask.sum())))
            loss, grads = regression_loss(student, xb, y[idx])
            if not math.isfinite(loss):
                raise ArithmeticError("non-finite distillation loss")
            student.net.params = opt.step(student.net.params, grads, cfg.learning_rate)
            total += loss
            batches += 1
        train_curve.append(total / batches)
        if n_val:
            val_curve.append(regression_loss(student, xv, yv)[0])
    rms = action_rms(student, xv, yv) if n_val else float("nan")
    return student, StudentTraining(train_curve, val_curve, rms)


def _run(act, env: RotateEnv, episodes: int, spec: StudentObsSpec | None):
    """Episode loop that tracks resets so a history-based actor sees fresh frames."""
    hist = History(env.num_envs, spec) if spec else None
    prev = np.zeros((env.num_envs, ACTION_DIM))
    limit = env.cfg.max_episode_steps * (episodes // env.num_envs + 2)
    obs = env.observe()
    for _ in range(limit):
        if len(env.finished) >= episodes:
            break
        a = act(env, obs, hist.push(spec.frame(obs, prev)) if hist else None)
        result = env.step(a)
        prev = np.where(result.resets[:, None], 0.0, a)
        if hist:
            hist.clear(result.resets)
        obs = env.observe()
    return env.finished[:episodes]


def evaluate_student(student: Student, env_cfg: EnvConfig, episodes: int = 64, dtol: float = 0.25) -> EvalReport:
    """Greedy student rollouts with the relaxed goal tolerance."""
    env = _teacher_env(env_cfg, dtol)
    records = _run(lambda e, o, x: student.act(x), env, episodes, student.spec)
    return report_from_episodes(records, env_cfg.dt)


def evaluate_teacher(teacher: Policy, env_cfg: EnvConfig, episodes: int = 64, dtol: float = 0.15) -> EvalReport:
    env = _teacher_env(env_cfg, dtol)
    records = _run(lambda e, o, x: teacher.act(e.policy_obs()), env, episodes, None)
    return report_from_episodes(records, env_cfg.dt)


@dataclass
class DistillReport:
    training: StudentTraining
    teacher: EvalReport
    student: EvalReport

    @property
    def rots_ratio(self) -> float:
        t = self.teacher.rots_per_ep
        return self.student.rots_per_ep / t if t else float("nan")

    def to_dict(self) -> dict:
        t, s = self.teacher.to_dict(), self.student.to_dict()
        t.pop("episodes")
        s.pop("episodes")
        return {"training": self.training.to_dict(), "teacher": t, "student": s, "rots_ratio": self.rots_ratio}


def distill(teacher: Policy, env_cfg: EnvConfig, cfg: DistillConfig | None = None,
            episodes: int = 64) -> tuple[Student, DistillReport]:
    """Collect, fit and evaluate on noise-free copies of ``env_cfg``."""
    cfg = cfg or DistillConfig()
    spec = StudentObsSpec()
    data = collect_teacher_dataset(teacher, env_cfg.replace(noise_std=0.0, seed=cfg.seed), cfg.dataset_size,
                                   spec, dtol=cfg.teacher_dtol)
    student, training = train_student(data, cfg)
    quiet = env_cfg.replace(noise_std=0.0, seed=cfg.seed + 1)
    report = DistillReport(
        training,
        evaluate_teacher(teacher, quiet, episodes, cfg.teacher_dtol),
        evaluate_student(student, quiet, episodes, cfg.student_dtol),
    )
    return student, report
