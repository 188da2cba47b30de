"""Pulling structured output out of free-form LLM responses."""

from __future__ import annotations

import re
from dataclasses import dataclass

TAGS = ("reward-dsl", "eval-dsl", "verdict")

_FENCE = re.compile(r"^[ \t]*```")


class ExtractionError(ValueError):
    pass


class VerdictParseError(ValueError):
    pass


def extract_code_block(response: str, tag: str) -> str:
    """Contents of the first fenced block whose info string equals ``tag``.

    One trailing newline is trimmed. An unterminated block runs to the end of
    the response.
    """
    if tag not in TAGS:
        raise ValueError(f"unsupported tag {tag!r}")
    lines = response.split("\n")
    i = 0
    while i < len(lines):
        line = lines[i]
        if _FENCE.match(line):
            info = line.strip()[3:].strip()
            body: list[str] = []
            i += 1
            while i < len(lines) and not _FENCE.match(lines[i]):
                body.append(lines[i])
                i += 1
            if info == tag:
                text = "\n".join(body) + "\n"
                return text[:-1] if text.endswith("\n") else text
        i += 1
    raise ExtractionError(f"no block tagged {tag}")


@dataclass(frozen=True)
class PeVerdict:
    satisfied: bool
    suggestions: str = ""

    @property
    def effective_suggestions(self) -> str:
        """Suggestions the loop acts on; a satisfied verdict has none."""
        return "" if self.satisfied else self.suggestions

    def to_json(self) -> dict:
        return {"satisfied": self.satisfied, "suggestions": self.suggestions}

    @classmethod
    def from_json(cls, d: dict) -> "PeVerdict":
        return cls(bool(d["satisfied"]), str(d.get("suggestions", "")))


_HEADER = re.compile(r"^\s*SATISFIED\s*:\s*(.*?)\s*$", re.IGNORECASE | re.MULTILINE)
_SUGGESTIONS = re.compile(r"^\s*SUGGESTIONS\s*:", re.IGNORECASE | re.MULTILINE)


def parse_pe_verdict(text: str) -> PeVerdict:
    m = _HEADER.search(text)
    if m is None:
        raise VerdictParseError("verdict has no 'SATISFIED: yes|no' line")
    value = m.group(1).lower()
    if value not in ("yes", "no"):
        raise VerdictParseError(f"SATISFIED must be yes or no, got {m.group(1)!r}")
    s = _SUGGESTIONS.search(text)
    suggestions = text[s.end():].strip() if s else ""
    return PeVerdict(value == "yes", suggestions)
