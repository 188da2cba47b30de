"""Prompt builders for the four LLM stages.

Every builder is a pure function of its inputs. The system prompts are
versioned text files next to this module so cassette digests stay stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from ..dsl import PerformanceReport
from ..envs import EnvSchema
from .messages import ChatMessage

TEMPLATE_VERSION = 1
STAGES = ("ee", "rfg", "efg", "pe")


def _template(stage: str) -> str:
    return resources.files(__package__).joinpath("templates", f"{stage}_system.txt").read_text(encoding="utf-8")


SYSTEM_PROMPTS = {stage: _template(stage) for stage in STAGES}


def stage_of(messages: list[ChatMessage]) -> str:
    """Which stage a request belongs to, judged by its system prompt."""
    for m in messages:
        if m.role == "system":
            for stage, text in SYSTEM_PROMPTS.items():
                if m.content == text:
                    return stage
    raise ValueError("request does not use a known system prompt")


def render_sections(sections: list[tuple[str, str | None]]) -> str:
    """``### TITLE`` blocks; sections with empty bodies are omitted."""
    parts = []
    for title, body in sections:
        if body is None or not body.strip():
            continue
        parts.append(f"### {title}\n{body.strip()}")
    return "\n\n".join(parts) + "\n"


def parse_sections(text: str) -> dict[str, str]:
    """Inverse of :func:`render_sections`."""
    out: dict[str, str] = {}
    title = None
    lines: list[str] = []
    for line in text.splitlines():
        if line.startswith("### "):
            if title is not None:
                out[title] = "\n".join(lines).strip()
            title, lines = line[4:].strip(), []
        else:
            lines.append(line)
    if title is not None:
        out[title] = "\n".join(lines).strip()
    return out


def fenced(tag: str, body: str) -> str:
    return f"```{tag}\n{body.rstrip()}\n```"


@dataclass(frozen=True)
class TrainingSummary:
    """What the evaluation stages learn about the trained agent."""

    env_name: str
    total_steps: int
    final_return: float
    reward_source: str

    def render(self) -> str:
        return (
            f"Environment: {self.env_name}\n"
            f"Training steps: {self.total_steps}\n"
            f"Final mean evaluation return: {self.final_return:.6g}\n"
            f"Reward program used for training:\n{fenced('reward-dsl', self.reward_source)}"
        )


def render_report(report: PerformanceReport) -> str:
    lines = [
        f"Environment: {report.env_name}; episodes: {report.episodes}; checkpoint: {report.checkpoint_id or 'n/a'}",
        "",
        "| metric | mean | std | per-episode values |",
        "|---|---|---|---|",
    ]
    for name in report.order or report.metrics:
        m = report.metrics[name]
        values = ", ".join(f"{v:.6g}" for v in m.values)
        lines.append(f"| {name} | {m.mean:.6g} | {m.std:.6g} | {values} |")
    return "\n".join(lines)


def build_rfg_prompt(
    task: str,
    env_description: str,
    example: str = "",
    suggestions: str = "",
    previous_program: str = "",
    previous_error: str = "",
) -> list[ChatMessage]:
    if not task.strip():
        raise ValueError("task description must not be empty")
    user = render_sections([
        ("TASK", task),
        ("ENVIRONMENT", env_description),
        ("EXAMPLE", fenced("reward-dsl", example) if example.strip() else ""),
        ("SUGGESTIONS", suggestions),
        ("PREVIOUS PROGRAM", fenced("reward-dsl", previous_program) if previous_program.strip() else ""),
        ("ERROR", previous_error),
    ])
    return [ChatMessage("system", SYSTEM_PROMPTS["rfg"]), ChatMessage("user", user)]


def build_efg_prompt(
    task: str,
    env_description: str,
    example: str = "",
    suggestions: str = "",
    training_summary: TrainingSummary | str = "",
    previous_program: str = "",
    previous_error: str = "",
) -> list[ChatMessage]:
    if not task.strip():
        raise ValueError("task description must not be empty")
    summary = training_summary.render() if isinstance(training_summary, TrainingSummary) else training_summary
    user = render_sections([
        ("TASK", task),
        ("ENVIRONMENT", env_description),
        ("EXAMPLE", fenced("eval-dsl", example) if example.strip() else ""),
        ("SUGGESTIONS", suggestions),
        ("TRAINED AGENT", summary),
        ("PREVIOUS PROGRAM", fenced("eval-dsl", previous_program) if previous_program.strip() else ""),
        ("ERROR", previous_error),
    ])
    return [ChatMessage("system", SYSTEM_PROMPTS["efg"]), ChatMessage("user", user)]


def build_pe_prompt(
    task: str,
    env_description: str,
    example: str,
    reward_source: str,
    eval_source: str,
    performance_report: PerformanceReport,
    previous_error: str = "",
) -> list[ChatMessage]:
    if not performance_report.metrics:
        raise ValueError("performance report has no metrics")
    user = render_sections([
        ("TASK", task),
        ("ENVIRONMENT", env_description),
        ("EXAMPLE", example),
        ("REWARD PROGRAM", fenced("reward-dsl", reward_source)),
        ("EVALUATION PROGRAM", fenced("eval-dsl", eval_source)),
        ("PERFORMANCE", render_report(performance_report)),
        ("ERROR", previous_error),
    ])
    return [ChatMessage("system", SYSTEM_PROMPTS["pe"]), ChatMessage("user", user)]


def build_ee_prompt(env_schema: EnvSchema, suggestions: str = "") -> list[ChatMessage]:
    user = render_sections([
        ("ENVIRONMENT", env_schema.card()),
        ("SUGGESTIONS", suggestions),
    ])
    return [ChatMessage("system", SYSTEM_PROMPTS["ee"]), ChatMessage("user", user)]
