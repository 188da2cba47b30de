"""Command-line interface: run, resume, replay, inspect, bench, check.

Exit codes: 0 success (run satisfied, replay identical, all checks pass),
1 failure, 2 budget exhausted (or some bench task unsatisfied), 64 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

from . import __version__
from .baselines import constant_action_oracle, random_baseline
from .config import ConfigFileError, load_config, schema_help
from .curated import find_task
from .llm import LLMClient, LLMError, ProviderConfig, ProviderConfigError
from .orchestrator import Orchestrator, RunState, RunStateError, TaskSpec, load_state
from .plots import training_curve
from .sac import ConfigError, TrainingLog
from .selfcheck import run_checks

EXIT_OK, EXIT_FAIL, EXIT_EXHAUSTED, EXIT_USAGE = 0, 1, 2, 64
STATUS_EXIT = {"satisfied": EXIT_OK, "exhausted": EXIT_EXHAUSTED, "failed": EXIT_FAIL, "running": EXIT_FAIL}


class UsageError(Exception):
    pass


def _progress(quiet: bool):
    return (lambda msg: None) if quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))


def _finish(state: RunState, run_dir: Path) -> int:
    print(f"run directory: {run_dir}")
    print(f"status: {state.status} after {len(state.iterations)} iteration(s)")
    if state.best_checkpoint:
        print(f"best checkpoint: {run_dir / state.best_checkpoint}")
    if state.failure:
        print(f"failed at iteration {state.failure['iteration']}, stage {state.failure['stage']}: "
              f"{state.failure['message']}")
    return STATUS_EXIT[state.status]


# -- run / resume ------------------------------------------------------------


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigFileError as exc:
        for p in exc.problems:
            print(p, file=sys.stderr)
        return EXIT_USAGE
    run_dir = Path(args.run_dir) if args.run_dir else cfg.run_dir
    if (run_dir / "state.json").exists():
        print(f"{run_dir} already holds a run; use 'skillforge resume {run_dir}'", file=sys.stderr)
        return EXIT_USAGE
    client = LLMClient(cfg.provider)
    orch = Orchestrator(run_dir, client, progress=_progress(args.quiet))
    state = orch.start(cfg.spec, cfg.to_json())
    return _finish(state, run_dir)


def _provider_from_run(run_dir: Path) -> tuple[TaskSpec, ProviderConfig]:
    path = run_dir / "config.json"
    if not path.is_file():
        raise UsageError(f"{run_dir} is not a run directory (no config.json)")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        return TaskSpec.from_json(doc["task"]), ProviderConfig(**doc["llm"])
    except (ValueError, KeyError, TypeError, ProviderConfigError) as exc:
        raise UsageError(f"{path}: unusable run configuration ({exc})") from None


def cmd_resume(args) -> int:
    run_dir = Path(args.run_dir)
    _, provider = _provider_from_run(run_dir)
    client = LLMClient(provider)
    state = Orchestrator(run_dir, client, progress=_progress(args.quiet)).resume()
    return _finish(state, run_dir)


# -- replay ------------------------------------------------------------------

REPLAY_DIR = ".replay"


def _normalized(path: Path) -> bytes:
    """File bytes, with wall-clock timestamps removed from iteration records."""
    data = path.read_bytes()
    if path.name == "record.json":
        try:
            doc = json.loads(data)
        except ValueError:
            return data
        doc.pop("timestamps", None)
        return (json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")
    return data


def _compared_files(root: Path) -> list[str]:
    out = []
    for p in sorted(root.rglob("*")):
        rel = p.relative_to(root)
        if not p.is_file() or rel.parts[0] in (REPLAY_DIR, "config.json") or p.suffix == ".svg":
            continue
        if p.name.startswith(".") and p.name.endswith(".tmp"):
            continue
        out.append(rel.as_posix())
    return out


def first_divergence(original: Path, replayed: Path) -> tuple[str, int] | None:
    """First differing artifact and byte offset, or None when identical."""
    a_files, b_files = _compared_files(original), _compared_files(replayed)
    for rel in sorted(set(a_files) | set(b_files)):
        if rel not in b_files:
            return rel, 0
        if rel not in a_files:
            return rel, 0
        a = _normalized(original / rel)
        b = _normalized(replayed / rel)
        if a != b:
            n = min(len(a), len(b))
            offset = next((i for i in range(n) if a[i] != b[i]), n)
            return rel, offset
    return None


def cmd_replay(args) -> int:
    run_dir = Path(args.run_dir)
    spec, provider = _provider_from_run(run_dir)
    cassette = run_dir / "cassette.jsonl"
    if not cassette.is_file():
        raise UsageError(f"{run_dir} has no cassette.jsonl to replay")
    out = run_dir / REPLAY_DIR
    shutil.rmtree(out, ignore_errors=True)
    # the cassette is read fully up front; the replayed run writes its own transcript
    replay_cfg = ProviderConfig(mode="replay", model=provider.model, temperature=provider.temperature,
                                cassette=str(cassette))
    try:
        state = Orchestrator(out, LLMClient(replay_cfg), progress=_progress(args.quiet)).start(spec)
    except LLMError as exc:
        print(f"replay diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if state.failure and "DigestMismatch" in state.failure["message"]:
        print(f"replay diverged: {state.failure['message']}", file=sys.stderr)
        if not args.keep:
            shutil.rmtree(out, ignore_errors=True)
        return EXIT_FAIL
    diff = first_divergence(run_dir, out)
    if not args.keep:
        shutil.rmtree(out, ignore_errors=True)
    if diff is not None:
        rel, offset = diff
        print(f"replay diverged: {run_dir / rel} differs at byte {offset}")
        return EXIT_FAIL
    print(f"replay identical: {len(_compared_files(run_dir))} artifacts match")
    return EXIT_OK


# -- inspect -----------------------------------------------------------------


def _headline(rec) -> tuple[str, float] | None:
    if rec.performance is None or not rec.performance.metrics:
        return None
    name = (rec.performance.order or tuple(rec.performance.metrics))[0]
    return name, rec.performance.metrics[name].mean


def inspect_report(state: RunState) -> dict:
    rows = []
    for rec in state.iterations:
        head = _headline(rec)
        rows.append({
            "iteration": rec.index,
            "attempts": {s: len(v) for s, v in rec.attempts.items()},
            "completed": list(rec.completed),
            "satisfied": None if rec.verdict is None else rec.verdict.satisfied,
            "suggestions": "" if rec.verdict is None else rec.verdict.effective_suggestions,
            "final_return": rec.final_return,
            "metrics": {} if rec.performance is None else {k: v.mean for k, v in rec.performance.metrics.items()},
            "headline": None if head is None else {"metric": head[0], "mean": head[1]},
        })
    return {"run_id": state.run_id, "task": state.spec.task, "env": state.spec.env_name, "status": state.status,
            "best_checkpoint": state.best_checkpoint, "failure": state.failure, "iterations": rows}


def format_inspect(report: dict) -> str:
    lines = [f"run {report['run_id']}  env {report['env']}  status {report['status']}",
             f"task: {report['task']}", ""]
    header = f"{'iter':>4}  {'ee':>2} {'rfg':>3} {'efg':>3} {'pe':>2}  {'verdict':<11} {'final return':>12}  headline"
    lines += [header, "-" * len(header)]
    for r in report["iterations"]:
        a = r["attempts"]
        verdict = {True: "satisfied", False: "unsatisfied", None: "incomplete"}[r["satisfied"]]
        ret = "" if r["final_return"] is None else f"{r['final_return']:.4g}"
        head = "" if r["headline"] is None else f"{r['headline']['metric']} = {r['headline']['mean']:.4g}"
        lines.append(f"{r['iteration']:>4}  {a['ee']:>2} {a['rfg']:>3} {a['efg']:>3} {a['pe']:>2}  "
                     f"{verdict:<11} {ret:>12}  {head}")
    if report["failure"]:
        f = report["failure"]
        lines.append(f"\nfailed at iteration {f['iteration']}, stage {f['stage']}: {f['message']}")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "state.json").is_file():
        raise UsageError(f"{run_dir} is not a run directory (no state.json)")
    state = load_state(run_dir)
    report = inspect_report(state)
    if not args.no_plots:
        for rec in state.iterations:
            if rec.training_log and (run_dir / rec.training_log).is_file():
                log_ = TrainingLog.from_csv((run_dir / rec.training_log).read_text(encoding="utf-8"))
                if log_.records:
                    svg = training_curve(log_, f"{state.spec.env_name}: iteration {rec.index}")
                    (run_dir / rec.dirname / "training_curve.svg").write_text(svg, encoding="utf-8")
    print(json.dumps(report, indent=2, sort_keys=True) if args.json else format_inspect(report))
    return EXIT_OK


# -- bench -------------------------------------------------------------------


@dataclass
class BenchRow:
    task: str
    env: str
    status: str
    iterations: int
    first_iteration_satisfied: bool
    headline_metric: str
    headline_value: float | None
    baseline_value: float | None
    oracle_value: float | None
    run_dir: str
    error: str = ""


@dataclass
class BenchSummary:
    rows: list[BenchRow]

    @property
    def success_rate(self) -> float:
        return sum(r.status == "satisfied" for r in self.rows) / len(self.rows) if self.rows else 0.0

    @property
    def first_iteration_rate(self) -> float:
        return sum(r.first_iteration_satisfied for r in self.rows) / len(self.rows) if self.rows else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = list(BenchRow.__dataclass_fields__)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for r in self.rows:
            w.writerow(["" if getattr(r, n) is None else getattr(r, n) for n in names])
        return buf.getvalue()

    def to_text(self, reward_only: bool = False) -> str:
        lines = [f"{'#':>2}  {'env':<10} {'status':<10} {'iters':>5}  {'headline':<28} {'baseline':>9} {'oracle':>9}  task"]
        for i, r in enumerate(self.rows):
            head = "" if r.headline_value is None else f"{r.headline_metric} = {r.headline_value:.4g}"
            base = "" if r.baseline_value is None else f"{r.baseline_value:.4g}"
            orc = "" if r.oracle_value is None else f"{r.oracle_value:.4g}"
            lines.append(f"{i:>2}  {r.env:<10} {r.status:<10} {r.iterations:>5}  {head:<28} {base:>9} {orc:>9}  {r.task}")
        total = len(self.rows)
        ok = sum(r.status == "satisfied" for r in self.rows)
        lines.append(f"\nsuccess rate: {ok}/{total} = {self.success_rate:.3f}")
        if reward_only:
            first = sum(r.first_iteration_satisfied for r in self.rows)
            lines.append(f"first-iteration (reward generation only) success: {first}/{total} = {self.first_iteration_rate:.3f}")
        return "\n".join(lines)


def load_task_list(path: str | None, suite: str | None) -> dict:
    if suite:
        if suite != "desk":
            raise UsageError(f"unknown suite {suite!r}; available: desk")
        text = resources.files("skillforge").joinpath("data", "desk_suite.json").read_text(encoding="utf-8")
        name = "desk suite"
    elif path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read task list {path}: {exc}") from None
        name = path
    else:
        raise UsageError("give a task list file or --suite desk")
    try:
        doc = json.loads(text) if text.strip() else {"tasks": []}
    except json.JSONDecodeError as exc:
        raise UsageError(f"{name}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if isinstance(doc, list):
        doc = {"tasks": doc}
    if not isinstance(doc, dict) or not isinstance(doc.get("tasks"), list):
        raise UsageError(f"{name}: expected an object with a 'tasks' list")
    if not doc["tasks"]:
        raise UsageError(f"{name}: the task list is empty")
    for i, t in enumerate(doc["tasks"]):
        if not isinstance(t, dict) or not isinstance(t.get("task"), str) or not isinstance(t.get("env"), str):
            raise UsageError(f"{name}: task {i} needs string fields 'task' and 'env'")
    return doc


def _bench_one(job: dict) -> BenchRow:
    spec_kw, provider_kw, run_dir = job["spec"], job["provider"], Path(job["run_dir"])
    task, env = spec_kw["task"], spec_kw["env_name"]
    curated = find_task(task, env)
    headline = curated.metric if curated else ""
    baseline = oracle = None
    if curated is not None:
        baseline = random_baseline(env, curated.eval).metrics[curated.metric].mean
        oracle = constant_action_oracle(curated).value
    try:
        spec = TaskSpec(**spec_kw)
        shutil.rmtree(run_dir, ignore_errors=True)
        state = Orchestrator(run_dir, LLMClient(ProviderConfig(**provider_kw)), progress=lambda m: None).start(spec)
    except Exception as exc:  # recorded, never fatal to the batch
        return BenchRow(task, env, "failed", 0, False, headline, None, baseline, oracle, str(run_dir),
                        f"{type(exc).__name__}: {exc}")
    done = [r for r in state.iterations if r.performance is not None]
    value = None
    if done:
        perf = done[-1].performance
        if not headline or headline not in perf.metrics:
            headline = (perf.order or tuple(perf.metrics))[0]
        value = perf.metrics[headline].mean
    first = bool(state.iterations and state.iterations[0].verdict is not None and state.iterations[0].verdict.satisfied)
    err = state.failure["message"] if state.failure else ""
    return BenchRow(task, env, state.status, len(state.iterations), first, headline, value, baseline, oracle,
                    str(run_dir), err)


def run_bench(doc: dict, provider_kw: dict, out_dir: Path, jobs: int = 1, sac_overrides: dict | None = None) -> BenchSummary:
    jobs_list = []
    for i, t in enumerate(doc["tasks"]):
        sac = {**doc.get("sac", {}), **t.get("sac", {}), **(sac_overrides or {})}
        spec = {"task": t["task"], "env_name": t["env"],
                "max_iterations": int(t.get("max_iterations", doc.get("max_iterations", 5))),
                "max_attempts": int(t.get("max_attempts", doc.get("max_attempts", 3))),
                "sac_overrides": sac, "seed": int(t.get("seed", doc.get("seed", 0)))}
        pk = dict(provider_kw)
        if pk.get("mode") == "replay":
            pk["cassette"] = str(Path(pk["cassette"]) / f"task_{i:02d}.jsonl")
        jobs_list.append({"spec": spec, "provider": pk, "run_dir": str(out_dir / f"task_{i:02d}")})
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_bench_one, jobs_list))
    else:
        rows = [_bench_one(j) for j in jobs_list]
    return BenchSummary(rows)


def cmd_bench(args) -> int:
    doc = load_task_list(args.tasks, args.suite)
    provider_kw = {"mode": args.provider}
    if args.provider in ("live", "record"):
        base = ProviderConfig.from_env(args.provider)
        provider_kw.update(base_url=base.base_url, model=base.model)
    if args.provider == "replay":
        if not args.cassette_dir:
            raise UsageError("replay benches need --cassette-dir holding task_NN.jsonl files")
        provider_kw["cassette"] = args.cassette_dir
    try:
        probe = dict(provider_kw)
        if args.provider == "replay":
            probe["cassette"] = "probe"
        ProviderConfig(**probe)
    except ProviderConfigError as exc:
        raise UsageError(str(exc)) from None
    overrides = {}
    if args.steps:
        overrides = {"total_steps": args.steps, "warmup_steps": min(1000, args.steps // 4),
                     "eval_interval": max(1, args.steps // 10)}
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = run_bench(doc, provider_kw, out_dir, args.jobs, overrides)
    text = summary.to_text(args.reward_only)
    (out_dir / "summary.txt").write_text(text + "\n", encoding="utf-8")
    (out_dir / "summary.csv").write_text(summary.to_csv(), encoding="utf-8")
    if args.json:
        print(json.dumps({"rows": [asdict(r) for r in summary.rows], "success_rate": summary.success_rate,
                          "first_iteration_rate": summary.first_iteration_rate}, indent=2))
    else:
        print(text)
    return EXIT_OK if summary.success_rate == 1.0 else EXIT_EXHAUSTED


# -- check -------------------------------------------------------------------


def cmd_check(args) -> int:
    results = run_checks(full_gradients=args.full)
    failed = [r for r in results if not r.ok]
    for r in results:
        if args.verbose or not r.ok:
            print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:<18} {r.seconds:6.2f}s  {r.detail}")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed"
          + (f"; failing: {', '.join(r.name for r in failed)}" if failed else ""))
    return EXIT_FAIL if failed else EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skillforge", description="Turn a task description into a trained control policy.",
                                epilog="Exit codes: 0 ok, 1 failure, 2 exhausted, 64 usage/config error.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="start a run from a JSON config", epilog=schema_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    r.add_argument("config", help="path to the run configuration (JSON)")
    r.add_argument("--run-dir", help="override the run directory from the config")
    r.add_argument("-q", "--quiet", action="store_true", help="no progress output")
    r.set_defaults(func=cmd_run)

    r = sub.add_parser("resume", help="continue an interrupted run")
    r.add_argument("run_dir")
    r.add_argument("-q", "--quiet", action="store_true")
    r.set_defaults(func=cmd_resume)

    r = sub.add_parser("replay", help="re-execute a run from its cassette and compare artifacts")
    r.add_argument("run_dir")
    r.add_argument("--keep", action="store_true", help=f"keep the replayed run in RUN_DIR/{REPLAY_DIR}")
    r.add_argument("-q", "--quiet", action="store_true")
    r.set_defaults(func=cmd_replay)

    r = sub.add_parser("inspect", help="summarize a run and write training-curve SVGs")
    r.add_argument("run_dir")
    r.add_argument("--json", action="store_true", help="machine-readable report")
    r.add_argument("--no-plots", action="store_true", help="do not write SVG files")
    r.set_defaults(func=cmd_inspect)

    r = sub.add_parser("bench", help="run a list of tasks and summarize success rates")
    r.add_argument("tasks", nargs="?", help="task list JSON ({'tasks': [{'task', 'env'}, ...]})")
    r.add_argument("--suite", help="bundled suite instead of a file (available: desk)")
    r.add_argument("--provider", default="stub:happy_path", help="LLM mode (default stub:happy_path)")
    r.add_argument("--cassette-dir", help="directory of task_NN.jsonl cassettes for --provider replay")
    r.add_argument("--out", default="bench_runs", help="output directory (default bench_runs)")
    r.add_argument("--jobs", type=int, default=1, help="parallel tasks (default 1)")
    r.add_argument("--steps", type=int, default=0, help="override SAC total_steps for every task")
    r.add_argument("--reward-only", action="store_true", help="also report first-iteration success")
    r.add_argument("--json", action="store_true", help="machine-readable summary")
    r.set_defaults(func=cmd_bench)

    r = sub.add_parser("check", help="run the fast self-check suite")
    r.add_argument("-v", "--verbose", action="store_true", help="list every check")
    r.add_argument("--full", action="store_true", help="gradient checks at the full 64x64 network size")
    r.set_defaults(func=cmd_check)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RunStateError, ConfigError, ProviderConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
