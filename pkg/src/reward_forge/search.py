"""Iterative reward discovery: sample programs, train each, keep the best, feed back, repeat."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import EnvConfig, roster
from .llm import (
    TASK_DESCRIPTION, LlmEndpoint, PromptStrategy, build_initial_prompt, build_reflection,
    chat, strategy_roster,
)
from .llm.client import LlmError
from .ppo import Policy, PpoConfig, TrainResult, evaluate_policy, train
from .reward_lang import (
    ExtractError, ParseError, ShapeError, analyze, check, extract_code_block, parse,
)

log = logging.getLogger(__name__)

STAGES = ("ok", "extract", "parse", "check", "eval-fault")
SUMMARY_COLUMNS = ("iteration", "sample", "status", "fitness", "vars", "loc", "halstead_volume")


@dataclass
class DiscoveryConfig:
    endpoint: LlmEndpoint
    iterations: int = 5
    samples: int = 4
    strategy: PromptStrategy = PromptStrategy.BONUS_PENALTY_MOD
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    eval_episodes: int = 64
    workers: int = 1
    task_description: str = TASK_DESCRIPTION

    def __post_init__(self):
        if isinstance(self.strategy, str):
            self.strategy = PromptStrategy.parse(self.strategy)
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def snapshot(self) -> dict:
        """Settings that determine the outcome; excludes output paths and secrets."""
        snap = {
            "endpoint": self.endpoint.describe(),
            "iterations": self.iterations,
            "samples": self.samples,
            "strategy": self.strategy.value,
            "seed": self.seed,
            "eval_episodes": self.eval_episodes,
            "task_description": self.task_description,
            "env": dataclasses.asdict(self.env),
            "ppo": dataclasses.asdict(self.ppo),
        }
        return json.loads(json.dumps(snap))  # tuples become lists, as after a reload


@dataclass
class Candidate:
    iteration: int
    sample: int
    response: str
    status: str
    source: str | None = None
    error: str = ""
    result: TrainResult | None = None
    fitness: float | None = None
    metrics: dict | None = None
    env_seed: int = 0
    ppo_seed: int = 0

    @property
    def id(self) -> str:
        return f"{self.iteration}_{self.sample}"

    @property
    def runnable(self) -> bool:
        return self.status == "ok"

    @property
    def score(self) -> float:
        """Fitness, or minus infinity for a candidate that never completed training."""
        return self.fitness if self.fitness is not None else -math.inf

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "iteration": self.iteration,
            "sample": self.sample,
            "status": self.status,
            "error": self.error,
            "fitness": self.fitness,
            "metrics": self.metrics,
            "env_seed": self.env_seed,
            "ppo_seed": self.ppo_seed,
            "source": self.source,
            "response": self.response,
            "result": self.result.to_dict(include_wall_time=False) if self.result else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Candidate":
        return cls(
            iteration=d["iteration"], sample=d["sample"], response=d["response"], status=d["status"],
            source=d["source"], error=d["error"],
            result=TrainResult.from_dict(d["result"]) if d["result"] else None,
            fitness=d["fitness"], metrics=d["metrics"], env_seed=d["env_seed"], ppo_seed=d["ppo_seed"],
        )


@dataclass
class ExperimentRecord:
    config: dict
    iterations: list = field(default_factory=list)  # list[list[Candidate]]
    lineage: list = field(default_factory=list)     # best-so-far per iteration
    transcripts: list = field(default_factory=list)  # prompt sent in each iteration
    best_id: str | None = None
    best_eval: dict | None = None
    status: str = "completed"
    error: str = ""

    @property
    def candidates(self) -> list[Candidate]:
        return [c for group in self.iterations for c in group]

    @property
    def generation_rate(self) -> float:
        cands = self.candidates
        return sum(c.runnable for c in cands) / len(cands) if cands else 0.0

    @property
    def best(self) -> Candidate | None:
        for c in self.candidates:
            if c.id == self.best_id:
                return c
        return None

    def to_dict(self) -> dict:
        best = self.best
        return {
            "config": self.config,
            "status": self.status,
            "error": self.error,
            "generation_rate": self.generation_rate,
            "best_id": self.best_id,
            "best_fitness": best.fitness if best else None,
            "best_source": best.source if best else None,
            "best_eval": self.best_eval,
            "lineage": self.lineage,
            "iterations": [[c.to_dict() for c in group] for group in self.iterations],
            "transcripts": self.transcripts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecord":
        return cls(
            config=d["config"],
            iterations=[[Candidate.from_dict(c) for c in group] for group in d["iterations"]],
            lineage=d["lineage"],
            transcripts=d["transcripts"],
            best_id=d["best_id"],
            best_eval=d["best_eval"],
            status=d["status"],
            error=d["error"],
        )


def fitness(result: TrainResult) -> float:
    """Peak checkpoint task score of a completed run; minus infinity otherwise."""
    if result is None or not result.completed or not result.task_score:
        return -math.inf
    return max(result.task_score)


def select_best(candidates: list[Candidate]) -> Candidate:
    """Highest score, earliest candidate on ties. All-failed input returns a failed candidate."""
    if not candidates:
        raise ValueError("select_best needs at least one candidate")
    best = candidates[0]
    for c in candidates[1:]:
        if c.score > best.score:
            best = c
    return best


def candidate_seeds(master: int, iteration: int, sample: int) -> tuple[int, int]:
    env_seed, ppo_seed = np.random.SeedSequence([master, iteration, sample]).generate_state(2)
    return int(env_seed), int(ppo_seed)


def evaluate_candidate(response: str, iteration: int, sample: int, names: dict, env_cfg: EnvConfig,
                       ppo_cfg: PpoConfig, master_seed: int) -> tuple[Candidate, dict | None]:
    """Extract, parse, check and train one response. Returns the candidate and its policy."""
    env_seed, ppo_seed = candidate_seeds(master_seed, iteration, sample)
    cand = Candidate(iteration, sample, response, status="ok", env_seed=env_seed, ppo_seed=ppo_seed)
    try:
        cand.source = extract_code_block(response)
    except ExtractError as e:
        cand.status, cand.error = "extract", str(e)
        return cand, None
    try:
        program = parse(cand.source, names=set(names), origin="llm")
    except ParseError as e:
        cand.status, cand.error = "parse", str(e)
        return cand, None
    try:
        check(program, names)
    except ShapeError as e:
        cand.status, cand.error = "check", str(e)
        return cand, None
    m = analyze(program, names)
    cand.metrics = {"vars": m.vars_used, "loc": m.loc, "halstead_volume": m.volume}
    policy, result = train(program, env_cfg.replace(seed=env_seed), dataclasses.replace(ppo_cfg, seed=ppo_seed))
    cand.result = result
    if not result.completed:
        cand.status, cand.error = "eval-fault", result.fault
        return cand, None
    cand.fitness = fitness(result)
    return cand, policy.to_dict()


def _evaluate_star(args):
    return evaluate_candidate(*args)


def run_discovery(cfg: DiscoveryConfig, out_dir=None) -> ExperimentRecord:
    """Run the full generate / train / select / reflect loop, persisting after each iteration."""
    full = roster(cfg.env.n_keypoints)
    names = strategy_roster(cfg.strategy, full)
    initial = build_initial_prompt(cfg.strategy, full, cfg.task_description)
    transcript = initial
    record = ExperimentRecord(config=cfg.snapshot())
    best: Candidate | None = None
    best_policy = None
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    try:
        for it in range(cfg.iterations):
            record.transcripts.append(transcript.to_list())
            try:
                responses = [chat(cfg.endpoint, transcript, sample=it * cfg.samples + j)
                             for j in range(cfg.samples)]
            except LlmError as e:
                record.status, record.error = "aborted", f"iteration {it}: {e}"
                record.transcripts.pop()
                raise
            jobs = [(r, it, j, names, cfg.env, cfg.ppo, cfg.seed) for j, r in enumerate(responses)]
            outcomes = list(pool.map(_evaluate_star, jobs)) if pool else [_evaluate_star(j) for j in jobs]
            group = [c for c, _ in outcomes]
            policies = {c.id: p for c, p in outcomes}
            record.iterations.append(group)
            for c in group:
                log.info("candidate %s: %s fitness=%s", c.id, c.status, c.fitness)

            winner = select_best(group)
            if winner.runnable:
                transcript = transcript.extended(winner.response, build_reflection(winner.source, winner.result))
                if best is None or winner.score > best.score:
                    best, best_policy = winner, policies[winner.id]
            else:
                log.info("iteration %d produced no runnable candidate; restarting from the initial prompt", it)
                transcript = initial
            record.best_id = best.id if best else None
            record.lineage.append({
                "iteration": it,
                "iteration_best": winner.id if winner.runnable else None,
                "iteration_best_fitness": winner.fitness,
                "best": record.best_id,
                "best_fitness": best.fitness if best else None,
            })
            if out_dir is not None:
                persist(record, out_dir)
    except LlmError:
        if out_dir is not None:
            persist(record, out_dir)
        raise
    finally:
        if pool is not None:
            pool.shutdown()

    if best_policy is not None:
        policy = Policy.from_dict(best_policy)
        record.best_eval = evaluate_policy(policy, cfg.env, cfg.eval_episodes).to_dict()
        record.best_eval.pop("episodes")
        if out_dir is not None:
            (Path(out_dir) / "best").mkdir(parents=True, exist_ok=True)
            policy.save(Path(out_dir) / "best" / "policy.json")
    if out_dir is not None:
        persist(record, out_dir)
    return record


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def summary_csv(record: ExperimentRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for c in record.candidates:
        m = c.metrics or {}
        w.writerow([
            c.iteration, c.sample, c.status,
            "" if c.fitness is None else repr(c.fitness),
            m.get("vars", ""), m.get("loc", ""),
            "" if "halstead_volume" not in m else repr(m["halstead_volume"]),
        ])
    return buf.getvalue()


def persist(record: ExperimentRecord, out_dir) -> Path:
    """Write the experiment directory layout; returns the directory."""
    out = Path(out_dir)
    try:
        (out / "candidates").mkdir(parents=True, exist_ok=True)
        (out / "transcripts").mkdir(exist_ok=True)
        (out / "best").mkdir(exist_ok=True)
        (out / "experiment.json").write_text(_dump(record.to_dict()))
        for c in record.candidates:
            (out / "candidates" / f"{c.id}.rwd").write_text(c.source if c.source is not None else c.response)
            meta = {k: v for k, v in c.to_dict().items() if k not in ("source", "response")}
            (out / "candidates" / f"{c.id}.meta.json").write_text(_dump(meta))
        for i, t in enumerate(record.transcripts):
            (out / "transcripts" / f"{i}.json").write_text(_dump(t))
        best = record.best
        if best is not None:
            (out / "best" / "final.rwd").write_text(best.source)
        (out / "summary.csv").write_text(summary_csv(record))
    except OSError as e:
        raise OSError(f"cannot write experiment to {out}: {e}") from e
    return out


def load(out_dir) -> ExperimentRecord:
    path = Path(out_dir) / "experiment.json"
    try:
        return ExperimentRecord.from_dict(json.loads(path.read_text()))
    except OSError as e:
        raise OSError(f"cannot read experiment record {path}: {e}") from e


def best_so_far(record: ExperimentRecord) -> list[float]:
    return [-math.inf if e["best_fitness"] is None else e["best_fitness"] for e in record.lineage]


__all__ = [
    "Candidate", "DiscoveryConfig", "ExperimentRecord", "SUMMARY_COLUMNS",
    "best_so_far", "candidate_seeds", "evaluate_candidate", "fitness", "load", "persist",
    "run_discovery", "select_best", "summary_csv",
]
