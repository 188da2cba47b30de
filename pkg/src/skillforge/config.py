"""Run configuration files: JSON validated against a fixed schema.

Validation happens before any side effect. Every problem is reported with
the line and column of the offending key or value in the source text.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .envs import SCHEMAS
from .llm import ENV_API_KEY, ProviderConfig, ProviderConfigError
from .orchestrator import TaskSpec, new_state
from .sac import ConfigError, SacConfig

_SAC_KEYS = {f for f in SacConfig.__dataclass_fields__} - {"seed"}

# key -> (accepted python types, required, description)
TOP_LEVEL = {
    "task": ((str,), True, "natural-language task description"),
    "env": ((str,), True, f"environment name: {', '.join(sorted(SCHEMAS))}"),
    "max_iterations": ((int,), False, "outer iteration budget K (default 5)"),
    "max_attempts": ((int,), False, "per-stage LLM attempt budget N (default 3)"),
    "seed": ((int,), False, "run seed (default 0)"),
    "run_dir": ((str,), False, "run directory, relative to the config file (default runs/<run id>)"),
    "sac": ((dict,), False, "SAC overrides, e.g. total_steps"),
    "llm": ((dict,), False, "provider settings"),
}
LLM_KEYS = {
    "mode": ((str,), "live | record | replay | stub:<name> (default stub:happy_path)"),
    "base_url": ((str,), "provider base URL (default from SKILLFORGE_BASE_URL)"),
    "model": ((str,), "model name (default from SKILLFORGE_MODEL or gpt-4)"),
    "api_key_env": ((str,), f"name of the variable holding the API key (default {ENV_API_KEY})"),
    "timeout": ((int, float), "request timeout in seconds"),
    "max_retries": ((int,), "retries on transport failure"),
    "temperature": ((int, float), "sampling temperature (default 0.2)"),
    "cassette": ((str,), "cassette path for replay (or an extra record target)"),
}


class ConfigFileError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("\n".join(problems))


@dataclass
class RunConfigFile:
    spec: TaskSpec
    provider: ProviderConfig
    run_dir: Path
    raw: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"task": self.spec.to_json(), "llm": self.provider.to_json()}


def _locate(text: str, path: list[str]) -> tuple[int, int]:
    """Line and column of the key at ``path``; falls back to the parent."""
    pos = 0
    for key in path:
        m = re.compile(r'"' + re.escape(key) + r'"\s*:').search(text, pos)
        if m is None:
            break
        pos = m.start()
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def _type_ok(value, types) -> bool:
    if isinstance(value, bool):
        return bool in types
    return isinstance(value, types)


def parse_config(text: str, name: str = "<config>", base_dir: Path | None = None) -> RunConfigFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigFileError([f"{name}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}"]) from None
    if not isinstance(doc, dict):
        raise ConfigFileError([f"{name}:1:1: the configuration must be a JSON object"])
    problems = []

    def bad(path: list[str], msg: str) -> None:
        line, col = _locate(text, path)
        problems.append(f"{name}:{line}:{col}: {'.'.join(path)}: {msg}")

    for key in doc:
        if key not in TOP_LEVEL:
            bad([key], f"unknown key; allowed keys are {', '.join(TOP_LEVEL)}")
    for key, (types, required, desc) in TOP_LEVEL.items():
        if key not in doc:
            if required:
                problems.append(f"{name}:1:1: missing required key {key!r} ({desc})")
            continue
        if not _type_ok(doc[key], types):
            bad([key], f"expected {' or '.join(t.__name__ for t in types)}")
    if problems:
        raise ConfigFileError(problems)

    if doc["env"] not in SCHEMAS:
        bad(["env"], f"unknown environment {doc['env']!r}; choose one of {', '.join(sorted(SCHEMAS))}")
    if not doc["task"].strip():
        bad(["task"], "must not be empty")
    for key in ("max_iterations", "max_attempts"):
        if key in doc and doc[key] < 1:
            bad([key], "must be at least 1")
    sac = doc.get("sac", {})
    for key in sac:
        if key not in _SAC_KEYS:
            hint = " (the training seed is derived from the run seed)" if key == "seed" else ""
            bad(["sac", key], f"unknown SAC option{hint}")
    llm = doc.get("llm", {})
    for key, value in llm.items():
        if key not in LLM_KEYS:
            bad(["llm", key], f"unknown key; allowed keys are {', '.join(LLM_KEYS)}")
        elif not _type_ok(value, LLM_KEYS[key][0]):
            bad(["llm", key], f"expected {' or '.join(t.__name__ for t in LLM_KEYS[key][0])}")
    if problems:
        raise ConfigFileError(problems)

    base_dir = base_dir or Path.cwd()
    try:
        spec = TaskSpec(doc["task"], doc["env"], doc.get("max_iterations", 5), doc.get("max_attempts", 3),
                        dict(sac), doc.get("seed", 0))
    except (ConfigError, TypeError, ValueError) as exc:
        bad(["sac"] if sac else ["task"], str(exc))
        raise ConfigFileError(problems) from None
    llm_kw = dict(llm)
    mode = llm_kw.pop("mode", "stub:happy_path")
    if llm_kw.get("cassette"):
        llm_kw["cassette"] = str((base_dir / llm_kw["cassette"]).resolve())
    try:
        provider = ProviderConfig.from_env(mode, **llm_kw)
    except ProviderConfigError as exc:
        bad(["llm", "mode"] if "llm" in doc else ["task"], str(exc))
        raise ConfigFileError(problems) from None
    run_dir = Path(doc.get("run_dir") or f"runs/{new_state(spec).run_id}")
    if not run_dir.is_absolute():
        run_dir = base_dir / run_dir
    return RunConfigFile(spec, provider, run_dir, doc)


def load_config(path: str | Path) -> RunConfigFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigFileError([f"{path}: cannot read configuration ({exc})"]) from None
    return parse_config(text, str(path), path.resolve().parent)


def schema_help() -> str:
    lines = ["Top-level keys:"]
    lines += [f"  {k:<15} {'required' if req else 'optional'}  {desc}" for k, (_, req, desc) in TOP_LEVEL.items()]
    lines.append("llm keys:")
    lines += [f"  {k:<15} {desc}" for k, (_, desc) in LLM_KEYS.items()]
    lines.append("sac keys: " + ", ".join(sorted(_SAC_KEYS)))
    return "\n".join(lines)
