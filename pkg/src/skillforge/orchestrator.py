"""The outer text-to-skill loop with its repair protocols and persistence.

One iteration runs, in order: environment explanation (EE), reward program
generation (RFG), SAC training, evaluation rollouts, evaluation program
generation (EFG), metric computation and performance assessment (PE). Every
artifact lands in the run directory before the next stage starts, so an
interrupted run can be resumed from the last completed stage.

Run directory layout::

    config.json               task and provider settings (no secrets)
    state.json                run status, best checkpoint, failure record
    cassette.jsonl            transcript of every LLM exchange
    iter_000/
        record.json           attempts, completed stages, timestamps
        prompts/<stage>_<n>.json
        env_description.txt
        reward_program.rdsl
        training_log.csv
        checkpoint.json
        rollouts/episode_NN.csv (+ .json header)
        eval_program.edsl
        performance.json
        pe_verdict.json
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from .curated import EXAMPLES
from .dsl import (
    DslError,
    EvalProgram,
    PerformanceReport,
    RewardProgram,
    eval_metrics,
    parse_eval,
    parse_reward,
    validate,
)
from .envs import EnvSchema, Trajectory, UnknownEnvironment, read_trajectory, rollout, schema, trajectory_csv
from .llm import (
    ChatMessage,
    ExtractionError,
    LLMClient,
    LLMError,
    PeVerdict,
    TrainingSummary,
    VerdictParseError,
    build_ee_prompt,
    build_efg_prompt,
    build_pe_prompt,
    build_rfg_prompt,
    extract_code_block,
    parse_pe_verdict,
    request_digest,
    request_json,
)
from .sac import ConfigError, PolicyCheckpoint, SacConfig, TrainingAborted, TrainingLog, policy_fn, train

log = logging.getLogger(__name__)

STATE_VERSION = 1
EVAL_EPISODES = 10
STAGES = ("ee", "rfg", "train", "rollout", "efg", "metrics", "pe")
LLM_STAGES = ("ee", "rfg", "efg", "pe")


# -- errors ------------------------------------------------------------------


class StageExhausted(RuntimeError):
    stage = ""

    def __init__(self, attempts: list["Attempt"], message: str = ""):
        self.attempts = list(attempts)
        last = attempts[-1].outcome if attempts else "no attempts"
        super().__init__(message or f"{self.stage} failed after {len(attempts)} attempt(s); last error: {last}")


class EeExhausted(StageExhausted):
    stage = "ee"


class RfgExhausted(StageExhausted):
    stage = "rfg"


class EfgExhausted(StageExhausted):
    stage = "efg"


class PeExhausted(StageExhausted):
    stage = "pe"


class RunStateError(RuntimeError):
    """A persisted artifact is missing, corrupt or of an unknown version."""

    def __init__(self, path: Path | str, message: str):
        self.path = Path(path)
        super().__init__(f"{path}: {message}")


# -- domain types ------------------------------------------------------------


@dataclass
class TaskSpec:
    task: str
    env_name: str
    max_iterations: int = 5
    max_attempts: int = 3
    sac_overrides: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not self.task.strip():
            raise ValueError("task description must not be empty")
        if self.max_iterations < 1 or self.max_attempts < 1:
            raise ValueError("iteration and attempt budgets must be at least 1")
        try:
            schema(self.env_name)
        except UnknownEnvironment as exc:
            raise ValueError(str(exc)) from None
        if "seed" in self.sac_overrides:
            raise ConfigError("the training seed is derived from the run seed; do not override it")
        self.sac_config(0)

    def sac_config(self, iteration: int) -> SacConfig:
        seed = derive_seed(self.seed, iteration, 0)
        return SacConfig.for_env(self.env_name, **{**self.sac_overrides, "seed": seed})

    def to_json(self) -> dict:
        return {"task": self.task, "env": self.env_name, "max_iterations": self.max_iterations,
                "max_attempts": self.max_attempts, "sac": dict(self.sac_overrides), "seed": self.seed}

    @classmethod
    def from_json(cls, d: dict) -> "TaskSpec":
        return cls(d["task"], d["env"], int(d["max_iterations"]), int(d["max_attempts"]),
                   dict(d.get("sac", {})), int(d["seed"]))


def derive_seed(run_seed: int, iteration: int, purpose: int) -> int:
    """Stable 31-bit seed for (run seed, iteration, purpose)."""
    return int(np.random.SeedSequence([run_seed, iteration, purpose]).generate_state(1)[0] >> 1)


@dataclass(frozen=True)
class EnvDescription:
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("environment description must not be empty")


@dataclass(frozen=True)
class ImprovementSuggestions:
    text: str = ""
    from_iteration: int | None = None


@dataclass
class Attempt:
    """One LLM exchange inside a stage and what became of it."""

    stage: str
    number: int
    prompt_digest: str
    response: str
    outcome: str  # "ok" or the error message fed back to the LLM

    @property
    def ok(self) -> bool:
        return self.outcome == "ok"

    def to_json(self) -> dict:
        return {"stage": self.stage, "number": self.number, "prompt_digest": self.prompt_digest,
                "response": self.response, "outcome": self.outcome}

    @classmethod
    def from_json(cls, d: dict) -> "Attempt":
        return cls(d["stage"], int(d["number"]), d["prompt_digest"], d["response"], d["outcome"])


@dataclass
class IterationRecord:
    index: int
    suggestions_in: str = ""
    completed: list[str] = field(default_factory=list)
    attempts: dict[str, list[Attempt]] = field(default_factory=lambda: {s: [] for s in LLM_STAGES})
    env_description: str = ""
    reward_source: str = ""
    training_log: str = ""
    checkpoint: str = ""
    final_return: float | None = None
    eval_source: str = ""
    performance: PerformanceReport | None = None
    verdict: PeVerdict | None = None
    timestamps: dict[str, list[str]] = field(default_factory=dict, compare=False)

    @property
    def dirname(self) -> str:
        return f"iter_{self.index:03d}"

    @property
    def llm_calls(self) -> int:
        return sum(len(v) for v in self.attempts.values())

    @property
    def done(self) -> bool:
        return "pe" in self.completed

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "suggestions_in": self.suggestions_in,
            "completed": list(self.completed),
            "attempts": {s: [a.to_json() for a in v] for s, v in self.attempts.items()},
            "training_log": self.training_log,
            "checkpoint": self.checkpoint,
            "final_return": self.final_return,
            "timestamps": self.timestamps,
        }


@dataclass
class RunState:
    run_id: str
    spec: TaskSpec
    iterations: list[IterationRecord] = field(default_factory=list)
    status: str = "running"
    best_checkpoint: str = ""
    failure: dict | None = None

    @property
    def suggestions(self) -> ImprovementSuggestions:
        """What the next iteration consumes: the latest completed verdict's suggestions."""
        for rec in reversed(self.iterations):
            if rec.done and rec.verdict is not None:
                return ImprovementSuggestions(rec.verdict.effective_suggestions, rec.index)
        return ImprovementSuggestions()

    def to_json(self) -> dict:
        return {
            "version": STATE_VERSION,
            "run_id": self.run_id,
            "task": self.spec.to_json(),
            "status": self.status,
            "best_checkpoint": self.best_checkpoint,
            "failure": self.failure,
            "iterations": [r.dirname for r in self.iterations],
        }


def new_state(spec: TaskSpec) -> RunState:
    digest = request_digest(spec.to_json())
    return RunState(f"run-{digest[:12]}", spec)


# -- persistence -------------------------------------------------------------


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def save_record(run_dir: Path, rec: IterationRecord) -> None:
    write_atomic(Path(run_dir) / rec.dirname / "record.json", _dump(rec.to_json()))


def save_state(run_dir: Path, state: RunState) -> None:
    run_dir = Path(run_dir)
    for rec in state.iterations:
        save_record(run_dir, rec)
    write_atomic(run_dir / "state.json", _dump(state.to_json()))


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise RunStateError(path, "missing") from None
    except (ValueError, UnicodeDecodeError) as exc:
        raise RunStateError(path, f"corrupt or partially written JSON ({exc})") from None


def _read_text(path: Path, strip_newline: bool = False) -> str:
    try:
        text = path.read_text(encoding="utf-8")
        return text[:-1] if strip_newline and text.endswith("\n") else text
    except FileNotFoundError:
        raise RunStateError(path, "missing") from None


def _load_record(run_dir: Path, name: str) -> IterationRecord:
    d = run_dir / name
    doc = _read_json(d / "record.json")
    try:
        rec = IterationRecord(
            int(doc["index"]), doc["suggestions_in"], list(doc["completed"]),
            {s: [Attempt.from_json(a) for a in doc["attempts"].get(s, [])] for s in LLM_STAGES},
            training_log=doc["training_log"], checkpoint=doc["checkpoint"],
            final_return=doc["final_return"], timestamps=doc.get("timestamps", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise RunStateError(d / "record.json", f"malformed record ({exc})") from None
    done = set(rec.completed)
    if "ee" in done:
        rec.env_description = _read_text(d / "env_description.txt", strip_newline=True)
    if "rfg" in done:
        rec.reward_source = _read_text(d / "reward_program.rdsl", strip_newline=True)
    if "train" in done:
        for rel in (rec.training_log, rec.checkpoint):
            if not (run_dir / rel).is_file():
                raise RunStateError(run_dir / rel, "missing")
    if "efg" in done:
        rec.eval_source = _read_text(d / "eval_program.edsl", strip_newline=True)
    if "metrics" in done:
        path = d / "performance.json"
        try:
            rec.performance = PerformanceReport.from_json(_read_json(path))
        except (KeyError, TypeError, ValueError) as exc:
            raise RunStateError(path, f"malformed performance report ({exc})") from None
    if "pe" in done:
        path = d / "pe_verdict.json"
        try:
            rec.verdict = PeVerdict.from_json(_read_json(path))
        except (KeyError, TypeError) as exc:
            raise RunStateError(path, f"malformed verdict ({exc})") from None
    return rec


def load_state(run_dir: Path) -> RunState:
    run_dir = Path(run_dir)
    path = run_dir / "state.json"
    doc = _read_json(path)
    if doc.get("version") != STATE_VERSION:
        raise RunStateError(path, f"incompatible state version {doc.get('version')!r} (this build reads {STATE_VERSION})")
    try:
        spec = TaskSpec.from_json(doc["task"])
        state = RunState(doc["run_id"], spec, [], doc["status"], doc["best_checkpoint"], doc["failure"])
        names = list(doc["iterations"])
    except (KeyError, TypeError, ValueError) as exc:
        raise RunStateError(path, f"malformed state ({exc})") from None
    state.iterations = [_load_record(run_dir, n) for n in names]
    return state


# -- stage protocols ---------------------------------------------------------


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


class _Exchange:
    """Calls the LLM and files the prompt/response pair under ``prompts/``."""

    def __init__(self, llm: LLMClient, prompt_dir: Path | None):
        self.llm = llm
        self.prompt_dir = prompt_dir

    def __call__(self, stage: str, number: int, messages: list[ChatMessage]) -> tuple[str, str]:
        cfg = self.llm.config
        digest = request_digest(request_json(cfg.model, cfg.temperature, messages))
        response = self.llm.complete(messages)
        if self.prompt_dir is not None:
            doc = {"stage": stage, "attempt": number, "digest": digest,
                   "messages": [m.to_json() for m in messages], "response": response}
            write_atomic(self.prompt_dir / f"{stage}_{number}.json", _dump(doc))
        return digest, response


def _exchange(llm, prompt_dir=None) -> _Exchange:
    return llm if isinstance(llm, _Exchange) else _Exchange(llm, prompt_dir)


def describe_environment(sch: EnvSchema, suggestions: str, llm, n: int, attempts: list[Attempt] | None = None) -> EnvDescription:
    """Ask for a prose explanation of ``sch``; empty answers are retried."""
    call = _exchange(llm)
    attempts = attempts if attempts is not None else []
    messages = build_ee_prompt(sch, suggestions)
    while len(attempts) < n:
        digest, response = call("ee", len(attempts) + 1, messages)
        text = response.strip()
        attempts.append(Attempt("ee", len(attempts) + 1, digest, response, "ok" if text else "empty response"))
        if text:
            return EnvDescription(text)
    raise EeExhausted(attempts)


def _context(description: str, sch: EnvSchema) -> str:
    return f"{description.strip()}\n\n{sch.card()}"


def generate_reward_program(
    task: str,
    env_description: str,
    sch: EnvSchema,
    suggestions: str,
    llm,
    n: int,
    attempts: list[Attempt] | None = None,
    previous_program: str = "",
    previous_error: str = "",
) -> tuple[RewardProgram, list[Attempt]]:
    """Repair loop for reward programs.

    Each failure's message is handed back verbatim, together with the
    program that caused it, in the next prompt. ``attempts`` may already hold
    earlier attempts of this iteration; they count against ``n``.
    """
    call = _exchange(llm)
    attempts = attempts if attempts is not None else []
    example = EXAMPLES[sch.name]["reward"]
    while len(attempts) < n:
        messages = build_rfg_prompt(task, env_description, example, suggestions, previous_program, previous_error)
        digest, response = call("rfg", len(attempts) + 1, messages)
        source = ""
        try:
            source = extract_code_block(response, "reward-dsl")
            program = parse_reward(source)
            validate(program, sch)
        except ExtractionError as exc:
            previous_program, previous_error = "", f"{exc}. Reply with exactly one ```reward-dsl fenced block."
        except DslError as exc:
            previous_program, previous_error = source, exc.render()
        else:
            attempts.append(Attempt("rfg", len(attempts) + 1, digest, response, "ok"))
            return program, attempts
        attempts.append(Attempt("rfg", len(attempts) + 1, digest, response, previous_error))
    raise RfgExhausted(attempts)


def generate_eval_program(
    task: str,
    env_description: str,
    sch: EnvSchema,
    suggestions: str,
    training_summary: TrainingSummary | str,
    llm,
    n: int,
    attempts: list[Attempt] | None = None,
    previous_program: str = "",
    previous_error: str = "",
) -> tuple[EvalProgram, list[Attempt]]:
    """Repair loop for evaluation programs (at least one metric required)."""
    call = _exchange(llm)
    attempts = attempts if attempts is not None else []
    example = EXAMPLES[sch.name]["eval"]
    while len(attempts) < n:
        messages = build_efg_prompt(task, env_description, example, suggestions, training_summary,
                                    previous_program, previous_error)
        digest, response = call("efg", len(attempts) + 1, messages)
        source = ""
        try:
            source = extract_code_block(response, "eval-dsl")
            program = parse_eval(source)
            validate(program, sch)
        except ExtractionError as exc:
            previous_program, previous_error = "", f"{exc}. Reply with exactly one ```eval-dsl fenced block."
        except DslError as exc:
            previous_program, previous_error = source, exc.render()
        else:
            attempts.append(Attempt("efg", len(attempts) + 1, digest, response, "ok"))
            return program, attempts
        attempts.append(Attempt("efg", len(attempts) + 1, digest, response, previous_error))
    raise EfgExhausted(attempts)


def assess_performance(
    task: str,
    env_description: str,
    example: str,
    reward_source: str,
    eval_source: str,
    report: PerformanceReport,
    llm,
    n: int,
    attempts: list[Attempt] | None = None,
) -> PeVerdict:
    """Ask for a verdict; unparseable answers are retried with the parse error."""
    call = _exchange(llm)
    attempts = attempts if attempts is not None else []
    error = ""
    while len(attempts) < n:
        messages = build_pe_prompt(task, env_description, example, reward_source, eval_source, report, error)
        digest, response = call("pe", len(attempts) + 1, messages)
        try:
            verdict = parse_pe_verdict(extract_code_block(response, "verdict"))
        except (ExtractionError, VerdictParseError) as exc:
            error = f"{exc}. Reply with one ```verdict block whose first line is SATISFIED: yes or SATISFIED: no."
            attempts.append(Attempt("pe", len(attempts) + 1, digest, response, error))
            continue
        attempts.append(Attempt("pe", len(attempts) + 1, digest, response, "ok"))
        return verdict
    raise PeExhausted(attempts)


# -- the loop ----------------------------------------------------------------


class _StageFailed(Exception):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(message)


StageHook = Callable[[IterationRecord, str], None]


class Orchestrator:
    """Drives one run inside ``run_dir`` with a dedicated LLM client."""

    def __init__(self, run_dir: Path | str, llm: LLMClient, on_stage: StageHook | None = None,
                 progress: Callable[[str], None] | None = None):
        self.run_dir = Path(run_dir)
        self.llm = llm
        self.on_stage = on_stage
        self.progress = progress or (lambda msg: log.info("%s", msg))

    # public entry points

    def start(self, spec: TaskSpec, config_doc: dict | None = None) -> RunState:
        if (self.run_dir / "state.json").exists():
            raise RunStateError(self.run_dir / "state.json", "run directory already holds a run; use resume")
        self.run_dir.mkdir(parents=True, exist_ok=True)
        transcript = self.run_dir / "cassette.jsonl"
        transcript.unlink(missing_ok=True)
        doc = config_doc if config_doc is not None else {"task": spec.to_json(), "llm": self.llm.config.to_json()}
        write_atomic(self.run_dir / "config.json", _dump(doc))
        state = new_state(spec)
        save_state(self.run_dir, state)
        self.llm.set_transcript(transcript, 0)
        return self.run(state)

    def resume(self) -> RunState:
        state = load_state(self.run_dir)
        if state.status in ("satisfied", "exhausted"):
            return state
        state.status, state.failure = "running", None
        calls = sum(r.llm_calls for r in state.iterations)
        # drop exchanges of a stage that never completed; they will be redone
        for rec in state.iterations:
            for s in LLM_STAGES:
                if s not in rec.completed and rec.attempts[s]:
                    calls -= len(rec.attempts[s])
                    rec.attempts[s] = []
        transcript = self.run_dir / "cassette.jsonl"
        _truncate_jsonl(transcript, calls)
        self.llm.set_transcript(transcript, calls)
        self.llm.seek(calls)
        return self.run(state)

    def run(self, state: RunState) -> RunState:
        spec = state.spec
        while state.status == "running":
            if state.iterations and not state.iterations[-1].done:
                rec = state.iterations[-1]
            elif len(state.iterations) >= spec.max_iterations:
                state.status = "exhausted"
                break
            else:
                rec = IterationRecord(len(state.iterations), state.suggestions.text)
                state.iterations.append(rec)
                save_state(self.run_dir, state)
            try:
                self.run_iteration(state, rec)
            except _StageFailed as exc:
                state.status = "failed"
                state.failure = {"iteration": rec.index, "stage": exc.stage, "message": str(exc)}
                self.progress(f"iteration {rec.index}: {exc.stage} failed: {exc}")
                save_state(self.run_dir, state)
                break
            if rec.verdict.satisfied:
                state.status = "satisfied"
            state.best_checkpoint = best_checkpoint(state)
            save_state(self.run_dir, state)
        if state.status == "exhausted":
            state.best_checkpoint = best_checkpoint(state)
            save_state(self.run_dir, state)
        return state

    def run_iteration(self, state: RunState, rec: IterationRecord) -> IterationRecord:
        spec = state.spec
        sch = schema(spec.env_name)
        n = spec.max_attempts
        d = self.run_dir / rec.dirname
        call = _Exchange(self.llm, d / "prompts")
        suggestions = rec.suggestions_in
        done = set(rec.completed)

        def finish(stage: str) -> None:
            rec.completed.append(stage)
            rec.timestamps.setdefault(stage, [_now(), _now()])[1] = _now()
            save_record(self.run_dir, rec)
            self.progress(f"iteration {rec.index}: {stage} done")
            if self.on_stage is not None:
                self.on_stage(rec, stage)

        def begin(stage: str) -> None:
            rec.timestamps[stage] = [_now(), ""]

        if "ee" not in done:
            begin("ee")
            try:
                desc = describe_environment(sch, suggestions, call, n, rec.attempts["ee"])
            except EeExhausted as exc:
                raise _StageFailed("ee", str(exc)) from exc
            except LLMError as exc:
                raise _StageFailed("ee", f"{type(exc).__name__}: {exc}") from exc
            rec.env_description = desc.text
            write_atomic(d / "env_description.txt", desc.text + "\n")
            finish("ee")
        context = _context(rec.env_description, sch)

        program = parse_reward(rec.reward_source) if "rfg" in done else None
        checkpoint = None
        trajectories: list[Trajectory] | None = None
        prev_program = prev_error = ""
        while "rollout" not in done:
            if program is None:
                begin("rfg")
                try:
                    program, _ = generate_reward_program(spec.task, context, sch, suggestions, call, n,
                                                         rec.attempts["rfg"], prev_program, prev_error)
                except RfgExhausted as exc:
                    raise _StageFailed("rfg", str(exc)) from exc
                except LLMError as exc:
                    raise _StageFailed("rfg", f"{type(exc).__name__}: {exc}") from exc
                rec.reward_source = extract_code_block(rec.attempts["rfg"][-1].response, "reward-dsl")
                write_atomic(d / "reward_program.rdsl", rec.reward_source + "\n")
                if "rfg" not in rec.completed:
                    finish("rfg")
                else:
                    save_record(self.run_dir, rec)
            try:
                if "train" not in done:
                    begin("train")
                    checkpoint = self._train(spec, rec, program, d)
                    done.add("train")
                    finish("train")
                else:
                    checkpoint = _load_checkpoint(self.run_dir / rec.checkpoint)
                begin("rollout")
                base = derive_seed(spec.seed, rec.index, 1)
                trajectories = rollout(sch.name, policy_fn(checkpoint), program, EVAL_EPISODES, base)
            except DslError as err:
                # runtime errors of the reward program go back to the generator
                prev_program, prev_error = rec.reward_source, err.render()
                rec.attempts["rfg"][-1].outcome = prev_error
                rec.completed = [s for s in rec.completed if s not in ("rfg", "train")]
                done.discard("train")
                if len(rec.attempts["rfg"]) >= n:
                    save_record(self.run_dir, rec)
                    raise _StageFailed("rfg", f"reward program failed at run time and the retry budget is spent: {prev_error}") from err
                program = None
                continue
            except TrainingAborted as exc:
                raise _StageFailed("train", str(exc)) from exc
            rollout_dir = d / "rollouts"
            for i, traj in enumerate(trajectories):
                _write_trajectory(rollout_dir / f"episode_{i:02d}.csv", traj)
            done.add("rollout")
            finish("rollout")
        if trajectories is None:
            trajectories = [read_trajectory(p) for p in sorted((d / "rollouts").glob("episode_*.csv"))]

        if "pe" in done:
            return rec
        summary = TrainingSummary(sch.name, self._steps(rec), rec.final_return if rec.final_return is not None
                                  else float("nan"), rec.reward_source)
        eval_program = parse_eval(rec.eval_source) if "efg" in done else None
        prev_program = prev_error = ""
        while "metrics" not in done:
            if eval_program is None:
                begin("efg")
                try:
                    eval_program, _ = generate_eval_program(spec.task, context, sch, suggestions, summary, call, n,
                                                            rec.attempts["efg"], prev_program, prev_error)
                except EfgExhausted as exc:
                    raise _StageFailed("efg", str(exc)) from exc
                except LLMError as exc:
                    raise _StageFailed("efg", f"{type(exc).__name__}: {exc}") from exc
                rec.eval_source = extract_code_block(rec.attempts["efg"][-1].response, "eval-dsl")
                write_atomic(d / "eval_program.edsl", rec.eval_source + "\n")
                if "efg" not in rec.completed:
                    finish("efg")
                else:
                    save_record(self.run_dir, rec)
            begin("metrics")
            try:
                report = eval_metrics(eval_program, trajectories, _checkpoint_id(self.run_dir / rec.checkpoint))
            except DslError as err:
                prev_program, prev_error = rec.eval_source, err.render()
                rec.attempts["efg"][-1].outcome = prev_error
                rec.completed = [s for s in rec.completed if s != "efg"]
                if len(rec.attempts["efg"]) >= n:
                    save_record(self.run_dir, rec)
                    raise _StageFailed("efg", f"evaluation program failed at run time and the retry budget is spent: {prev_error}") from err
                eval_program = None
                continue
            rec.performance = report
            write_atomic(d / "performance.json", _dump(report.to_json()))
            done.add("metrics")
            finish("metrics")

        begin("pe")
        example = f"```reward-dsl\n{EXAMPLES[sch.name]['reward']}\n```\n\n```eval-dsl\n{EXAMPLES[sch.name]['eval']}\n```"
        try:
            verdict = assess_performance(spec.task, context, example, rec.reward_source, rec.eval_source,
                                         rec.performance, call, n, rec.attempts["pe"])
        except PeExhausted as exc:
            raise _StageFailed("pe", str(exc)) from exc
        except LLMError as exc:
            raise _StageFailed("pe", f"{type(exc).__name__}: {exc}") from exc
        rec.verdict = verdict
        write_atomic(d / "pe_verdict.json", _dump(verdict.to_json()))
        finish("pe")
        return rec

    # helpers

    def _train(self, spec: TaskSpec, rec: IterationRecord, program: RewardProgram, d: Path) -> PolicyCheckpoint:
        config = spec.sac_config(rec.index)
        last = [0.0]

        def report(r) -> None:
            if time.monotonic() - last[0] > 10:
                last[0] = time.monotonic()
                self.progress(f"iteration {rec.index}: step {r.env_step}/{config.total_steps} return {r.mean_eval_return:.4g}")

        checkpoint, train_log = train(spec.env_name, program, config, progress=report)
        write_atomic(d / "training_log.csv", train_log.to_csv())
        write_atomic(d / "checkpoint.json", checkpoint.dumps())
        rec.training_log = f"{rec.dirname}/training_log.csv"
        rec.checkpoint = f"{rec.dirname}/checkpoint.json"
        rec.final_return = train_log.final_return
        return checkpoint

    def _steps(self, rec: IterationRecord) -> int:
        log_ = TrainingLog.from_csv(_read_text(self.run_dir / rec.training_log))
        return log_.records[-1].env_step if log_.records else 0


def best_checkpoint(state: RunState) -> str:
    """Checkpoint of the satisfied iteration, else of the latest completed one."""
    finished = [r for r in state.iterations if r.done]
    for r in finished:
        if r.verdict.satisfied:
            return r.checkpoint
    return finished[-1].checkpoint if finished else ""


def _load_checkpoint(path: Path) -> PolicyCheckpoint:
    try:
        return PolicyCheckpoint.from_json(_read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, RunStateError):
            raise
        raise RunStateError(path, f"malformed checkpoint ({exc})") from None


def _checkpoint_id(path: Path) -> str:
    doc = _read_json(path)
    return f"{doc['env_name']}-{doc['reward_hash'][:12]}-{doc['train_steps']}"


def _write_trajectory(path: Path, traj: Trajectory) -> None:
    write_atomic(path, trajectory_csv(traj))
    header = {"env": traj.env_name, "seed": traj.seed, "steps": len(traj), "programs": {}}
    write_atomic(path.with_suffix(".json"), json.dumps(header, indent=2, sort_keys=True) + "\n")


def _truncate_jsonl(path: Path, keep: int) -> None:
    if not path.exists():
        return
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines(keepends=True) if ln.strip()]
    if len(lines) > keep:
        write_atomic(path, "".join(lines[:keep]))


def run(spec: TaskSpec, llm: LLMClient, run_dir: Path | str, **kw) -> RunState:
    return Orchestrator(run_dir, llm, **kw).start(spec)


def resume(run_dir: Path | str, llm: LLMClient, **kw) -> RunState:
    return Orchestrator(run_dir, llm, **kw).resume()
