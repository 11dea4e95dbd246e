"""Actor-critic PPO in plain numpy.

The actor is an ELU MLP producing the mean of a diagonal Gaussian with a
state-independent log standard deviation; the critic is a separate ELU MLP.
Gradients are written out by hand for both networks.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import reward_lang
from .env import ACTION_DIM, POLICY_OBS_DIM, EnvConfig, RotateEnv
from .reward_lang import EvalFault, RewardProgram

LOG_2PI = math.log(2.0 * math.pi)
POLICY_FORMAT = "reward-forge-policy"
POLICY_VERSION = 1


@dataclass
class PpoConfig:
    rollout_steps: int = 8
    minibatch_size: int = 512
    mini_epochs: int = 5
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    kl_threshold: float = 0.02
    grad_norm_max: float = 1.0
    learning_rate: float = 5e-3
    lr_min: float = 1e-6
    lr_max: float = 1e-2
    hidden: tuple = (64, 64)
    entropy_coef: float = 0.0
    value_coef: float = 1.0
    init_log_std: float = 0.0
    total_steps: int = 1_000_000
    checkpoint_count: int = 10
    seed: int = 0
    precision: str = "float32"  # network arithmetic; float64 for gradient checks

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.checkpoint_count < 2:
            raise ValueError("checkpoint_count must be >= 2")
        if self.rollout_steps < 1 or self.minibatch_size < 1 or self.mini_epochs < 1:
            raise ValueError("rollout_steps, minibatch_size and mini_epochs must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if not 0 < self.lr_min <= self.learning_rate <= self.lr_max:
            raise ValueError("learning_rate must lie in [lr_min, lr_max] with lr_min > 0")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden sizes must be positive")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be 'float32' or 'float64'")


# --------------------------------------------------------------------------
# networks
# --------------------------------------------------------------------------

def elu(x, out=None):
    """ELU; passing ``out=x`` overwrites the pre-activation in place."""
    neg = np.minimum(x, 0.0)
    np.expm1(neg, out=neg)
    out = np.maximum(x, 0.0, out=out)
    out += neg
    return out


def elu_grad_from_output(h):
    # for x <= 0, elu(x) + 1 = exp(x); for x > 0 the slope is 1
    return np.minimum(h, 0.0) + 1.0


class MLP:
    """Fully connected ELU network with a linear output layer."""

    def __init__(self, sizes, rng: np.random.Generator | None = None, out_scale: float = 1.0,
                 dtype=np.float64):
        self.sizes = tuple(int(s) for s in sizes)
        self.params: list[np.ndarray] = []
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = i == len(self.sizes) - 2
            scale = (out_scale if last else math.sqrt(2.0)) / math.sqrt(n_in)
            w = rng.standard_normal((n_in, n_out)) * scale if rng is not None else np.zeros((n_in, n_out))
            self.params += [w.astype(dtype), np.zeros(n_out, dtype=dtype)]

    def forward(self, x):
        acts = [x]
        h = x
        n = len(self.params) // 2
        for i in range(n):
            z = h @ self.params[2 * i]
            z += self.params[2 * i + 1]
            if i < n - 1:
                h = elu(z, out=z)
                acts.append(h)
            else:
                h = z
        return h, acts

    def backward(self, cache, dout):
        acts = cache
        n = len(self.params) // 2
        grads: list[np.ndarray] = [None] * len(self.params)
        d = dout
        for i in reversed(range(n)):
            grads[2 * i] = acts[i].T @ d
            grads[2 * i + 1] = d.sum(axis=0)
            if i > 0:
                d = (d @ self.params[2 * i].T) * elu_grad_from_output(acts[i])
        return grads


class RunningMeanStd:
    """Streaming mean/variance for observation normalisation."""

    def __init__(self, dim: int):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4

    def update(self, x):
        x = x.reshape(-1, self.mean.shape[0])
        b_mean, b_var, b_count = x.mean(axis=0), x.var(axis=0), x.shape[0]
        delta = b_mean - self.mean
        tot = self.count + b_count
        self.mean = self.mean + delta * b_count / tot
        m2 = self.var * self.count + b_var * b_count + delta ** 2 * self.count * b_count / tot
        self.var = m2 / tot
        self.count = tot

    def normalize(self, x):
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -5.0, 5.0)


class Policy:
    """Gaussian actor, value critic and observation normaliser."""

    def __init__(self, obs_dim: int = POLICY_OBS_DIM, act_dim: int = ACTION_DIM, hidden=(64, 64),
                 rng: np.random.Generator | None = None, init_log_std: float = 0.0, dtype=np.float64):
        self.obs_dim, self.act_dim, self.hidden = obs_dim, act_dim, tuple(hidden)
        self.dtype = np.dtype(dtype)
        self.actor = MLP((obs_dim, *hidden, act_dim), rng, out_scale=0.01, dtype=self.dtype)
        self.critic = MLP((obs_dim, *hidden, 1), rng, out_scale=1.0, dtype=self.dtype)
        self.log_std = np.full(act_dim, float(init_log_std), dtype=self.dtype)
        self.obs_rms = RunningMeanStd(obs_dim)

    # parameters are exposed as one flat list so optimisers and gradient
    # clipping can treat them uniformly
    @property
    def params(self) -> list[np.ndarray]:
        return self.actor.params + self.critic.params + [self.log_std]

    def set_params(self, params):
        na, nc = len(self.actor.params), len(self.critic.params)
        self.actor.params = list(params[:na])
        self.critic.params = list(params[na:na + nc])
        self.log_std = params[na + nc]

    def normalize(self, obs):
        return self.obs_rms.normalize(obs).astype(self.dtype)

    def value(self, obs_n):
        return self.critic.forward(obs_n)[0][:, 0]

    def mean_action(self, obs_n):
        return self.actor.forward(obs_n)[0]

    def sample(self, obs_n, rng):
        mu = self.mean_action(obs_n)
        std = np.exp(self.log_std)
        actions = (mu + std * rng.standard_normal(mu.shape)).astype(self.dtype)
        return actions, self.log_prob(mu, actions)

    def log_prob(self, mu, actions):
        z = (actions - mu) / np.exp(self.log_std)
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(self.log_std) - 0.5 * self.act_dim * LOG_2PI

    def act(self, obs):
        """Deterministic action on raw observations, clipped to the valid range."""
        return np.clip(self.mean_action(self.normalize(obs)), -1.0, 1.0)

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": POLICY_FORMAT,
            "version": POLICY_VERSION,
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "hidden": list(self.hidden),
            "dtype": self.dtype.name,
            "actor": [p.tolist() for p in self.actor.params],
            "critic": [p.tolist() for p in self.critic.params],
            "log_std": self.log_std.tolist(),
            "obs_mean": self.obs_rms.mean.tolist(),
            "obs_var": self.obs_rms.var.tolist(),
            "obs_count": self.obs_rms.count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Policy":
        if data.get("format") != POLICY_FORMAT or data.get("version") != POLICY_VERSION:
            raise ValueError("not a reward-forge policy file (format/version mismatch)")
        dtype = np.dtype(data.get("dtype", "float64"))
        p = cls(data["obs_dim"], data["act_dim"], data["hidden"], dtype=dtype)
        p.actor.params = [np.asarray(a, dtype=dtype) for a in data["actor"]]
        p.critic.params = [np.asarray(a, dtype=dtype) for a in data["critic"]]
        p.log_std = np.asarray(data["log_std"], dtype=dtype)
        p.obs_rms.mean = np.asarray(data["obs_mean"], dtype=float)
        p.obs_rms.var = np.asarray(data["obs_var"], dtype=float)
        p.obs_rms.count = float(data["obs_count"])
        return p

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Policy":
        return cls.from_dict(json.loads(Path(path).read_text()))


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            out.append(p - lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


# --------------------------------------------------------------------------
# rollouts and advantages
# --------------------------------------------------------------------------

@dataclass
class TrajectoryBuffer:
    obs: np.ndarray       # (T, N, obs_dim), normalised
    actions: np.ndarray   # (T, N, act_dim)
    log_probs: np.ndarray  # (T, N)
    values: np.ndarray    # (T + 1, N), last row bootstraps
    rewards: np.ndarray   # (T, N)
    dones: np.ndarray     # (T, N)
    raw_obs: np.ndarray | None = None
    component_means: dict = field(default_factory=dict)

    def __len__(self):
        return self.rewards.size


def collect_rollout(policy: Policy, env: RotateEnv, reward: RewardProgram, steps: int,
                    rng: np.random.Generator) -> TrajectoryBuffer:
    """Step ``env`` for ``steps`` steps under the stochastic policy.

    Rewards come from evaluating ``reward`` on each step's observation batch;
    an ``EvalFault`` propagates to the caller.
    """
    n = env.num_envs
    raw = np.empty((steps, n, policy.obs_dim))
    obs = np.empty((steps, n, policy.obs_dim), dtype=policy.dtype)
    actions = np.empty((steps, n, policy.act_dim), dtype=policy.dtype)
    log_probs = np.empty((steps, n), dtype=policy.dtype)
    values = np.empty((steps + 1, n))
    rewards = np.empty((steps, n))
    dones = np.empty((steps, n))
    sums: dict[str, float] = {}
    for t in range(steps):
        raw[t] = env.policy_obs()
        o = policy.normalize(raw[t])
        a, lp = policy.sample(o, rng)
        obs[t], actions[t], log_probs[t], values[t] = o, a, lp, policy.value(o)
        result = env.step(np.clip(a, -1.0, 1.0))
        total, comps = reward_lang.evaluate(reward, result.obs)
        rewards[t] = total
        dones[t] = result.resets
        for name, v in comps.items():
            sums[name] = sums.get(name, 0.0) + float(v.mean())
    values[steps] = policy.value(policy.normalize(env.policy_obs()))
    means = {k: v / steps for k, v in sums.items()}
    return TrajectoryBuffer(obs, actions, log_probs, values, rewards, dones, raw, means)


def compute_gae(rewards, values, dones, gamma: float, lam: float):
    """Generalised advantage estimates and returns.

    ``values`` has one more row than ``rewards``; ``dones[t]`` cuts the
    bootstrap from step ``t`` into ``t + 1``.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    for t in reversed(range(rewards.shape[0])):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * live - values[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
    return adv, adv + values[:-1]


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=float)
    std = adv.std()
    if std == 0.0:
        return adv - adv.mean()
    return (adv - adv.mean()) / (std + 1e-8)


# --------------------------------------------------------------------------
# update
# --------------------------------------------------------------------------

@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    approx_kl: float
    clip_fraction: float
    learning_rate: float


def surrogate_loss(policy: Policy, batch: dict, cfg: PpoConfig):
    """Clipped PPO loss plus weighted value loss, with gradients for every parameter.

    ``batch`` holds ``obs`` (normalised), ``actions``, ``log_probs``,
    ``advantages`` and ``returns`` as flat arrays over samples.
    """
    obs, act = batch["obs"], batch["actions"]
    adv, ret, old_lp = batch["advantages"], batch["returns"], batch["log_probs"]
    m = obs.shape[0]
    std = np.exp(policy.log_std)

    mu, a_cache = policy.actor.forward(obs)
    v, c_cache = policy.critic.forward(obs)
    v = v[:, 0]
    z = (act - mu) / std
    lp = -0.5 * np.sum(z * z, axis=1) - np.sum(policy.log_std) - 0.5 * policy.act_dim * LOG_2PI
    log_ratio = lp - old_lp
    ratio = np.exp(log_ratio)
    lo, hi = 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps
    unclipped = ratio * adv
    clipped = np.clip(ratio, lo, hi) * adv
    policy_loss = -np.mean(np.minimum(unclipped, clipped))
    entropy = np.sum(policy.log_std) + 0.5 * policy.act_dim * (1.0 + LOG_2PI)
    value_loss = 0.5 * np.mean((v - ret) ** 2)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy

    # d(-min(r A, clip(r) A))/dr: A where the unclipped term is active, else
    # A only while r stays inside the clip range
    in_range = (ratio >= lo) & (ratio <= hi)
    g_ratio = np.where(unclipped <= clipped, adv, np.where(in_range, adv, 0.0))
    d_lp = -g_ratio * ratio / m
    d_mu = d_lp[:, None] * z / std
    d_log_std = np.sum(d_lp[:, None] * (z * z - 1.0), axis=0) - cfg.entropy_coef
    d_v = cfg.value_coef * (v - ret) / m

    grads = policy.actor.backward(a_cache, d_mu) + policy.critic.backward(c_cache, d_v[:, None]) + [d_log_std]
    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "approx_kl": float(np.mean((ratio - 1.0) - log_ratio)),
        "clip_fraction": float(np.mean(~in_range)),
    }
    return float(loss), grads, stats


def clip_grad_norm(grads, max_norm: float):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        grads = [g * scale for g in grads]
    return grads, total


def adapt_learning_rate(lr: float, kl: float, cfg: PpoConfig) -> float:
    """Halve on a KL overshoot, grow by half when well under the threshold."""
    if kl > cfg.kl_threshold:
        lr = lr / 2.0
    elif kl < cfg.kl_threshold / 2.0:
        lr = lr * 1.5
    return min(max(lr, cfg.lr_min), cfg.lr_max)


class PpoFault(RuntimeError):
    pass


class PpoLearner:
    def __init__(self, policy: Policy, cfg: PpoConfig, rng: np.random.Generator):
        self.policy, self.cfg, self.rng = policy, cfg, rng
        self.opt = Adam(policy.params)
        self.lr = cfg.learning_rate

    def update(self, buf: TrajectoryBuffer) -> UpdateStats:
        cfg = self.cfg
        adv, ret = compute_gae(buf.rewards, buf.values, buf.dones, cfg.gamma, cfg.gae_lambda)
        flat = {
            "obs": buf.obs.reshape(-1, buf.obs.shape[-1]),
            "actions": buf.actions.reshape(-1, buf.actions.shape[-1]),
            "log_probs": buf.log_probs.reshape(-1),
            "advantages": normalize_advantages(adv.reshape(-1)).astype(self.policy.dtype),
            "returns": ret.reshape(-1).astype(self.policy.dtype),
        }
        size = flat["log_probs"].shape[0]
        mb = min(cfg.minibatch_size, size)
        agg = {"policy_loss": 0.0, "value_loss": 0.0, "approx_kl": 0.0, "clip_fraction": 0.0}
        count = 0
        for _ in range(cfg.mini_epochs):
            perm = self.rng.permutation(size)
            for start in range(0, size - mb + 1, mb):
                idx = perm[start:start + mb]
                batch = {k: v[idx] for k, v in flat.items()}
                loss, grads, stats = surrogate_loss(self.policy, batch, cfg)
                if not math.isfinite(loss):
                    raise PpoFault("non-finite PPO loss")
                grads, _ = clip_grad_norm(grads, cfg.grad_norm_max)
                self.policy.set_params(self.opt.step(self.policy.params, grads, self.lr))
                self.lr = adapt_learning_rate(self.lr, stats["approx_kl"], cfg)
                for k in agg:
                    agg[k] += stats[k]
                count += 1
        return UpdateStats(**{k: v / count for k, v in agg.items()}, learning_rate=self.lr)


# --------------------------------------------------------------------------
# training driver
# --------------------------------------------------------------------------

@dataclass
class ComponentStats:
    values: list
    max: float
    mean: float
    min: float

    @classmethod
    def from_series(cls, full: list, checkpoints: list) -> "ComponentStats":
        return cls(values=list(checkpoints), max=float(max(full)), mean=float(np.mean(full)), min=float(min(full)))


@dataclass
class TrainResult:
    task_score: list
    components: dict
    checkpoint_steps: list
    total_steps: int
    status: str = "completed"  # completed | faulted
    fault: str = ""
    wall_time: float = field(default=0.0, compare=False)

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def to_dict(self, include_wall_time: bool = True) -> dict:
        d = asdict(self)
        if not include_wall_time:
            d.pop("wall_time")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainResult":
        d = dict(d)
        d["components"] = {k: ComponentStats(**v) for k, v in d["components"].items()}
        return cls(**d)


def checkpoint_indices(n_rollouts: int, count: int) -> list[int]:
    """Rollout indices sampled for ``count + 1`` evenly spaced checkpoints."""
    if n_rollouts == 0:
        return []
    return [int(round(k * (n_rollouts - 1) / count)) for k in range(count + 1)]


def _summarize(series, scores, steps, cfg, n_rollouts_done, status="completed", fault=""):
    idx = checkpoint_indices(len(scores), cfg.checkpoint_count)
    comps = {name: ComponentStats.from_series(vals, [vals[i] for i in idx]) for name, vals in series.items()}
    return TrainResult(
        task_score=[float(scores[i]) for i in idx],
        components=comps,
        checkpoint_steps=[int(steps[i]) for i in idx],
        total_steps=int(steps[-1]) if steps else 0,
        status=status,
        fault=fault,
    )


def train(reward: RewardProgram, env_cfg: EnvConfig | None = None, ppo_cfg: PpoConfig | None = None,
          progress=None) -> tuple[Policy, TrainResult]:
    """Train a policy on ``reward`` for ``ppo_cfg.total_steps`` environment steps.

    Component means and the task score are recorded for every rollout and
    sampled at ``checkpoint_count + 1`` evenly spaced checkpoints, the first
    being the untrained policy. A reward fault or a non-finite loss stops
    training and returns the partial result marked ``faulted``.
    """
    env_cfg = env_cfg or EnvConfig()
    cfg = ppo_cfg or PpoConfig()
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    env = RotateEnv(env_cfg)
    policy = Policy(POLICY_OBS_DIM, ACTION_DIM, cfg.hidden, rng, cfg.init_log_std, dtype=cfg.precision)
    learner = PpoLearner(policy, cfg, rng)
    per_rollout = cfg.rollout_steps * env.num_envs
    n_updates = cfg.total_steps // per_rollout

    series: dict[str, list] = {name: [] for name in reward.components}
    scores: list[float] = []
    steps: list[int] = []
    status, fault = "completed", ""

    if n_updates == 0:
        try:
            _, comps = reward_lang.evaluate(reward, env.observe())
        except EvalFault as e:
            result = TrainResult([], {}, [], 0, "faulted", str(e))
            result.wall_time = time.perf_counter() - start
            return policy, result
        result = TrainResult(
            task_score=[0.0],
            components={k: ComponentStats([float(v.mean())], float(v.mean()), float(v.mean()), float(v.mean()))
                        for k, v in comps.items()},
            checkpoint_steps=[0],
            total_steps=0,
        )
        result.wall_time = time.perf_counter() - start
        return policy, result

    for u in range(n_updates):
        try:
            buf = collect_rollout(policy, env, reward, cfg.rollout_steps, rng)
        except EvalFault as e:
            status, fault = "faulted", f"reward evaluation fault in {e.binding}"
            break
        for name, value in buf.component_means.items():
            series[name].append(value)
        scores.append(float(env.state.consecutive_successes))
        steps.append(u * per_rollout)
        try:
            learner.update(buf)
        except PpoFault as e:
            status, fault = "faulted", str(e)
            break
        policy.obs_rms.update(buf.raw_obs)
        if progress is not None:
            progress(u + 1, n_updates, scores[-1])

    if not scores:
        result = TrainResult([], {}, [], 0, status, fault)
    else:
        result = _summarize(series, scores, steps, cfg, len(scores), status, fault)
        if status == "completed":
            result.total_steps = n_updates * per_rollout
    result.wall_time = time.perf_counter() - start
    return policy, result


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

@dataclass
class EvalReport:
    rots_per_ep: float
    rots_per_ep_half_turns: float
    ep_len_seconds: float
    task_score: float
    episodes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def run_episodes(act, env_cfg: EnvConfig, episodes: int, max_steps: int | None = None) -> list:
    """Roll ``act(env, obs_batch)`` until ``episodes`` episodes have finished."""
    env = RotateEnv(env_cfg)
    obs = env.observe()
    limit = max_steps or (env_cfg.max_episode_steps * (episodes // env.num_envs + 2))
    for _ in range(limit):
        if len(env.finished) >= episodes:
            break
        obs = env.step(act(env, obs)).obs
    return env.finished[:episodes]


def report_from_episodes(records, dt: float) -> EvalReport:
    if not records:
        return EvalReport(0.0, 0.0, 0.0, 0.0, [])
    rots = np.array([r.rotations for r in records])
    return EvalReport(
        rots_per_ep=float(rots.mean()),
        rots_per_ep_half_turns=float(rots.mean() * 2.0 * math.pi / 3.14),
        ep_len_seconds=float(np.mean([r.length for r in records]) * dt),
        task_score=float(np.mean([r.successes for r in records])),
        episodes=[asdict(r) for r in records],
    )


def evaluate_policy(policy: Policy, env_cfg: EnvConfig | None = None, episodes: int = 64) -> EvalReport:
    """Greedy rollouts; averages rotations, episode length (seconds) and successes per episode."""
    env_cfg = env_cfg or EnvConfig()
    records = run_episodes(lambda env, obs: policy.act(env.policy_obs()), env_cfg, episodes)
    return report_from_episodes(records, env_cfg.dt)
