"""Deterministic scripted responders selectable as ``stub:<name>``.

Each responder is a pure function of the request messages, so a stubbed
run can be interrupted and resumed without any hidden responder state.
"""

from __future__ import annotations

import hashlib
import re

from ..curated import EXAMPLES, find_task
from .client import register_stub
from .messages import ChatMessage
from .prompts import fenced, parse_sections, stage_of

_ENV_LINE = re.compile(r"^Environment:\s*([A-Za-z0-9_]+)", re.MULTILINE)
_ROW = re.compile(r"^\|\s*([A-Za-z_][A-Za-z0-9_]*)\s*\|\s*([^|]+?)\s*\|", re.MULTILINE)

ENV_PROSE = {
    "pointmass": (
        "The pointmass environment is a 1 kg mass sliding on a straight line with linear friction. "
        "The observation is its position x in meters and velocity vx in meters per second; positive "
        "values point forward. The single action a0 is a force between -1 and 1 newtons, so the "
        "mass accelerates at a0 - 0.5*vx and can reach about 2 m/s, covering roughly 16 m in one "
        "200-step episode of 0.05 s steps. Episodes never terminate early and start near x = 0 at rest."
    ),
    "cartpole": (
        "The cartpole environment balances a pole hinged on a cart. The state is the cart position x, "
        "its velocity vx, the pole angle theta from upright, and the angular velocity omega. The action "
        "a0 in [-1, 1] pushes the cart with 10*a0 newtons. The episode ends when the pole tilts past "
        "0.7 rad or the cart leaves |x| <= 2.4, and lasts at most 500 steps of 0.02 s."
    ),
    "hopper1d": (
        "The hopper1d environment is a body moving vertically above the ground. The state is the height z, "
        "vertical velocity vz, and a contact flag that is 1 while the leg reaches the ground (z <= 0.5). "
        "While in contact the action a0 in [-1, 1] produces an upward thrust of 10*(a0 + 1) newtons "
        "against gravity; above 0.5 m the body flies ballistically. Full thrust lifts the body to about "
        "1 m. Episodes last 300 steps of 0.02 s."
    ),
}


def _user(messages: list[ChatMessage]) -> dict[str, str]:
    for m in messages:
        if m.role == "user":
            return parse_sections(m.content)
    return {}


def _env_name(sections: dict[str, str]) -> str:
    m = _ENV_LINE.search(sections.get("ENVIRONMENT", ""))
    return m.group(1) if m else "pointmass"


def _metric_means(sections: dict[str, str]) -> dict[str, float]:
    out = {}
    for name, mean in _ROW.findall(sections.get("PERFORMANCE", "")):
        try:
            out[name] = float(mean)
        except ValueError:
            continue
    return out


def _short_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:8]


def _curated_program(sections: dict[str, str], kind: str) -> str:
    env = _env_name(sections)
    task = find_task(sections.get("TASK", ""), env)
    if task is not None:
        return task.reward if kind == "reward" else task.eval
    return EXAMPLES.get(env, EXAMPLES["pointmass"])[kind]


def _judge(sections: dict[str, str]) -> tuple[bool, str]:
    env = _env_name(sections)
    task = find_task(sections.get("TASK", ""), env)
    means = _metric_means(sections)
    if task is None or task.metric not in means:
        return True, ""
    value = means[task.metric]
    if task.judge(value):
        return True, ""
    return False, (
        f"{task.metric} is {value:.6g}, which misses the target {task.op} {task.threshold:g}; "
        f"{task.advice}."
    )


@register_stub("happy_path")
def happy_path(messages: list[ChatMessage]) -> str:
    """Curated programs for known tasks and a threshold-based judge."""
    stage = stage_of(messages)
    sections = _user(messages)
    if stage == "ee":
        return ENV_PROSE.get(_env_name(sections), ENV_PROSE["pointmass"])
    if stage == "rfg":
        return "Here is the reward program.\n\n" + fenced("reward-dsl", _curated_program(sections, "reward"))
    if stage == "efg":
        return "Here is the evaluation program.\n\n" + fenced("eval-dsl", _curated_program(sections, "eval"))
    satisfied, suggestions = _judge(sections)
    body = "SATISFIED: yes" if satisfied else f"SATISFIED: no\nSUGGESTIONS:\n{suggestions}"
    return fenced("verdict", body)


@register_stub("always_unsatisfied")
def always_unsatisfied(messages: list[ChatMessage]) -> str:
    """Valid programs, but the judge is never satisfied.

    The suggestion embeds a digest of the performance table so each iteration
    produces distinct, traceable text.
    """
    if stage_of(messages) != "pe":
        return happy_path(messages)
    perf = _user(messages).get("PERFORMANCE", "")
    return fenced("verdict", f"SATISFIED: no\nSUGGESTIONS:\nTry a stronger shaping term (report {_short_digest(perf)}).")


@register_stub("repair")
def repair(messages: list[ChatMessage]) -> str:
    """First reward attempt uses an unknown identifier; the repair succeeds."""
    if stage_of(messages) == "rfg" and "ERROR" not in _user(messages):
        return fenced("reward-dsl", "reward = torso_velocity")
    return happy_path(messages)


@register_stub("garbage")
def garbage(messages: list[ChatMessage]) -> str:
    return "I am not able to produce that right now. )))( reward ==="


@register_stub("empty")
def empty(messages: list[ChatMessage]) -> str:
    return ""


@register_stub("bad_verdict")
def bad_verdict(messages: list[ChatMessage]) -> str:
    if stage_of(messages) == "pe":
        return fenced("verdict", "looks good to me")
    return happy_path(messages)


@register_stub("zero_metrics")
def zero_metrics(messages: list[ChatMessage]) -> str:
    if stage_of(messages) == "efg":
        return fenced("eval-dsl", "# nothing to measure")
    return happy_path(messages)


class ScriptedResponder:
    """Serves queued responses per stage; falls back to ``happy_path``.

    Unlike the built-in stubs this one is stateful, so it suits single
    in-process test runs rather than resume scenarios.
    """

    def __init__(self, script: dict[str, list[str]] | None = None, fallback=happy_path):
        self.queues = {k: list(v) for k, v in (script or {}).items()}
        self.fallback = fallback
        self.requests: list[tuple[str, list[ChatMessage]]] = []

    def __call__(self, messages: list[ChatMessage]) -> str:
        stage = stage_of(messages)
        self.requests.append((stage, list(messages)))
        queue = self.queues.get(stage)
        if queue:
            return queue.pop(0)
        return self.fallback(messages)

    def prompts(self, stage: str) -> list[str]:
        """User-message texts sent to ``stage`` so far."""
        return [next(m.content for m in msgs if m.role == "user") for s, msgs in self.requests if s == stage]
