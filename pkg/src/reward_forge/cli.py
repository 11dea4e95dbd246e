"""Command-line entry point: discover, train, distill, eval, analyze, report."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import distill as distill_mod
from . import search
from .config import ConfigError, Settings, load_config, with_overrides
from .env import roster
from .llm import LlmEndpoint, PromptStrategy, strategy_roster
from .llm.client import LlmError
from .ppo import Policy, evaluate_policy, train
from .reward_lang import BUILTIN_NAMES, ParseError, ShapeError, analyze, builtin_source, check, parse

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("reward_forge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


# --------------------------------------------------------------------------
# argument handling
# --------------------------------------------------------------------------

def _common(p, *flags):
    p.add_argument("--config", help="flat JSON settings file")
    p.add_argument("--seed", type=int, help="master seed; overrides every *.seed setting")
    if "out" in flags:
        p.add_argument("--out", help="output directory")
    if "steps" in flags:
        p.add_argument("--steps", type=int, help="PPO environment steps per training run")
    if "episodes" in flags:
        p.add_argument("--episodes", type=int, help="evaluation episodes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reward-forge", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("discover", help="iterative reward search driven by a chat model")
    _common(p, "out", "steps", "episodes")
    p.add_argument("--endpoint", help="chat endpoint base URL, or stub://<seed> for the offline stub")
    p.add_argument("--iterations", type=int)
    p.add_argument("--samples", type=int, help="candidates per iteration")
    p.add_argument("--strategy", choices=[s.value for s in PromptStrategy])
    p.add_argument("--workers", type=int, help="candidates trained in parallel")

    p = sub.add_parser("train", help="train a policy on one reward program")
    p.add_argument("reward", help="reward file or builtin:<name>")
    _common(p, "out", "steps", "episodes")

    p = sub.add_parser("distill", help="distil a teacher policy into a tactile student")
    p.add_argument("teacher", help="teacher policy file")
    _common(p, "out", "episodes")

    p = sub.add_parser("eval", help="roll out a policy and report Rots/Ep and episode length")
    p.add_argument("policy", help="policy or student file, or 'untrained' for a freshly initialised policy")
    _common(p, "episodes")

    p = sub.add_parser("analyze", help="code metrics of reward programs")
    p.add_argument("rewards", nargs="+", help="reward files or builtin:<name>")
    p.add_argument("--strategy", choices=[s.value for s in PromptStrategy], default="bpmod",
                   help="input roster to check against")

    p = sub.add_parser("report", help="performance and code-quality tables from experiment directories")
    p.add_argument("experiments", nargs="+", help="experiment directories written by discover")
    p.add_argument("--out", help="directory for report.md and report.csv")
    return parser


def _settings(args) -> Settings:
    base = load_config(args.config) if args.config else Settings()
    flat = {}
    if args.seed is not None:
        flat.update({"env.seed": args.seed, "ppo.seed": args.seed, "search.seed": args.seed,
                     "distill.seed": args.seed})
    for flag, key in (("steps", "ppo.total_steps"), ("episodes", "search.eval_episodes"),
                      ("endpoint", "search.endpoint"), ("iterations", "search.iterations"),
                      ("samples", "search.samples"), ("strategy", "search.strategy"),
                      ("workers", "search.workers")):
        value = getattr(args, flag, None)
        if value is not None:
            flat[key] = value
    return with_overrides(base, flat) if flat else base


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _reward_source(ref: str) -> tuple[str, str]:
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in BUILTIN_NAMES:
            raise UsageError(f"unknown builtin {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
        return builtin_source(name), ref
    return _existing(ref, "reward file").read_text(), ref


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_discover(args, st: Settings) -> int:
    s = st.search
    endpoint = LlmEndpoint(s.endpoint, model=s.model, timeout=s.timeout, max_retries=s.max_retries,
                           temperature=s.temperature)
    if endpoint.is_stub:
        try:
            endpoint.stub_seed
        except ValueError as e:
            raise UsageError(str(e)) from None
    cfg = search.DiscoveryConfig(endpoint, iterations=s.iterations, samples=s.samples, strategy=s.strategy,
                                 seed=s.seed, env=st.env, ppo=st.ppo, eval_episodes=s.eval_episodes,
                                 workers=s.workers)
    out = _out_dir(args, "runs/discover")
    record = search.run_discovery(cfg, out)
    best = record.best
    print(f"generation rate: {record.generation_rate:.3f}")
    print(f"best candidate: {record.best_id or 'none'}"
          + (f" (fitness {best.fitness:.4f})" if best else ""))
    if record.best_eval:
        e = record.best_eval
        print(f"best eval: rots/ep {e['rots_per_ep']:.3f}, ep_len {e['ep_len_seconds']:.2f} s, "
              f"task_score {e['task_score']:.3f}")
    print(f"written to {out}")
    return EXIT_OK


def _check(source: str, origin: str, names: dict):
    program = parse(source, names=set(names), origin=origin)
    check(program, names)
    return program


def cmd_train(args, st: Settings) -> int:
    source, origin = _reward_source(args.reward)
    program = _check(source, origin, roster(st.env.n_keypoints))
    out = _out_dir(args, "runs/train")

    def progress(done, total, score):
        if done == total or done % max(1, total // 10) == 0:
            log.info("update %d/%d task_score %.3f", done, total, score)

    policy, result = train(program, st.env, st.ppo, progress=progress)
    policy.save(out / "policy.json")
    report = evaluate_policy(policy, st.env, st.search.eval_episodes).to_dict()
    report.pop("episodes")
    (out / "train.json").write_text(_dump({
        "reward": origin, "source": source, "settings": st.to_flat(),
        "result": result.to_dict(include_wall_time=False), "eval": report,
    }))
    print(f"status: {result.status}" + (f" ({result.fault})" if result.fault else ""))
    print("task_score checkpoints: " + ", ".join(f"{x:.2f}" for x in result.task_score))
    print(_eval_table(report))
    print(f"written to {out}")
    return EXIT_OK if result.completed else EXIT_RUNTIME


def cmd_distill(args, st: Settings) -> int:
    teacher = Policy.load(_existing(args.teacher, "teacher policy"))
    out = _out_dir(args, "runs/distill")
    episodes = args.episodes or st.search.eval_episodes
    student, rep = distill_mod.distill(teacher, st.env, st.distill, episodes)
    student.save(out / "student.json")
    (out / "distill.json").write_text(_dump({"settings": st.to_flat(), "report": rep.to_dict()}))
    print(f"held-out action rms: {rep.training.val_action_rms:.4f}")
    print("teacher: " + _eval_table(rep.teacher.to_dict(), header=False))
    print("student: " + _eval_table(rep.student.to_dict(), header=False))
    print(f"rots/ep ratio: {rep.rots_ratio:.3f}")
    print(f"written to {out}")
    return EXIT_OK


def _load_actor(ref: str, st: Settings):
    if ref == "untrained":
        return "policy", Policy(hidden=st.ppo.hidden, rng=np.random.default_rng(st.ppo.seed))
    data = json.loads(_existing(ref, "policy file").read_text())
    if data.get("format") == distill_mod.STUDENT_FORMAT:
        return "student", distill_mod.Student.from_dict(data)
    return "policy", Policy.from_dict(data)


def _eval_table(report: dict, header: bool = True) -> str:
    row = (f"{report['rots_per_ep']:.3f}\t{report['rots_per_ep_half_turns']:.3f}\t"
           f"{report['ep_len_seconds']:.2f}\t{report['task_score']:.3f}")
    if not header:
        return row
    return "rots_per_ep\trots_per_ep_3.14\tep_len_s\ttask_score\n" + row


def cmd_eval(args, st: Settings) -> int:
    kind, actor = _load_actor(args.policy, st)
    episodes = args.episodes or st.search.eval_episodes
    if kind == "student":
        report = distill_mod.evaluate_student(actor, st.env, episodes, st.distill.student_dtol)
    else:
        report = evaluate_policy(actor, st.env, episodes)
    print(_eval_table(report.to_dict()))
    return EXIT_OK


def cmd_analyze(args) -> int:
    names = strategy_roster(PromptStrategy.parse(args.strategy), roster(6))
    rows = []
    for ref in args.rewards:
        source, origin = _reward_source(ref)
        m = analyze(_check(source, origin, names), names)
        rows.append((ref, m.vars_used, m.loc, m.volume))
    print("reward\tvars\tloc\thv")
    for ref, v, loc, hv in rows:
        print(f"{ref}\t{v}\t{loc}\t{hv:.2f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

REPORT_COLUMNS = ("experiment", "strategy", "seed", "gr", "best_fitness", "rots_per_ep", "ep_len_s",
                  "task_score", "vars", "loc", "hv")


def report_rows(records: list[tuple[str, search.ExperimentRecord]]) -> list[dict]:
    rows = []
    for name, rec in records:
        best = rec.best
        ev = rec.best_eval or {}
        m = (best.metrics if best else None) or {}
        rows.append({
            "experiment": name,
            "strategy": rec.config.get("strategy", ""),
            "seed": rec.config.get("seed", ""),
            "gr": rec.generation_rate,
            "best_fitness": best.fitness if best else None,
            "rots_per_ep": ev.get("rots_per_ep"),
            "ep_len_s": ev.get("ep_len_seconds"),
            "task_score": ev.get("task_score"),
            "vars": m.get("vars"),
            "loc": m.get("loc"),
            "hv": m.get("halstead_volume"),
        })
    return rows


def _cell(v, digits=2) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return "-" if math.isnan(v) else f"{v:.{digits}f}"
    return str(v)


def render_markdown(rows: list[dict]) -> str:
    perf = ("experiment", "strategy", "seed", "gr", "best_fitness", "rots_per_ep", "ep_len_s", "task_score")
    code = ("experiment", "vars", "loc", "hv")
    lines = ["# Discovery report", "", "## Performance", ""]
    for cols in (perf, None, code):
        if cols is None:
            lines += ["", "## Code quality", ""]
            continue
        lines.append("| " + " | ".join(cols) + " |")
        lines.append("|" + "|".join("---" for _ in cols) + "|")
        for r in rows:
            lines.append("| " + " | ".join(_cell(r[c]) for c in cols) + " |")
    return "\n".join(lines) + "\n"


def render_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                    for c in REPORT_COLUMNS])
    return buf.getvalue()


def cmd_report(args) -> int:
    records = []
    for d in args.experiments:
        path = _existing(d, "experiment directory")
        if not (path / "experiment.json").exists():
            raise UsageError(f"no experiment.json in {d}")
        records.append((path.name, search.load(path)))
    rows = report_rows(records)
    md, table = render_markdown(rows), render_csv(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.md").write_text(md)
        (out / "report.csv").write_text(table)
    sys.stdout.write(md)
    return EXIT_OK


# --------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "analyze":
            return cmd_analyze(args)
        if args.command == "report":
            return cmd_report(args)
        st = _settings(args)
        handler = {"discover": cmd_discover, "train": cmd_train, "distill": cmd_distill, "eval": cmd_eval}
        return handler[args.command](args, st)
    except (UsageError, ConfigError) as e:
        print(f"{parser.format_usage()}reward-forge: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ShapeError) as e:
        print(f"reward-forge: invalid reward program: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (LlmError, OSError, ValueError, RuntimeError) as e:
        print(f"reward-forge: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
