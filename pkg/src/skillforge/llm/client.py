"""Chat-completion client with live, record, replay and stub modes.

Live requests use the OpenAI-compatible wire format
(``POST {base_url}/chat/completions``). Record mode is live mode plus an
append-only cassette; replay mode serves a cassette back after checking that
each request's digest matches the recording.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import httpx

from .messages import ChatMessage

log = logging.getLogger(__name__)

ENV_BASE_URL = "SKILLFORGE_BASE_URL"
ENV_API_KEY = "SKILLFORGE_API_KEY"
ENV_MODEL = "SKILLFORGE_MODEL"

Responder = Callable[[list[ChatMessage]], str]
STUBS: dict[str, Responder] = {}


def register_stub(name: str, responder: Responder | None = None):
    """Register a deterministic responder; usable as a decorator."""
    def deco(fn: Responder) -> Responder:
        STUBS[name] = fn
        return fn
    return deco(responder) if responder is not None else deco


class LLMError(RuntimeError):
    pass


class TransportError(LLMError):
    pass


class DigestMismatch(LLMError):
    def __init__(self, index: int, message_index: int | None, detail: str):
        self.index = index
        self.message_index = message_index
        super().__init__(f"request {index} does not match the cassette: {detail}")


class CassetteExhausted(LLMError):
    pass


class ProviderConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProviderConfig:
    mode: str = "stub:happy_path"
    base_url: str = ""
    model: str = "gpt-4"
    api_key_env: str = ENV_API_KEY
    timeout: float = 120.0
    max_retries: int = 3
    temperature: float = 0.2
    cassette: str = ""

    def __post_init__(self):
        m = self.mode
        if m in ("live", "record"):
            if not self.base_url:
                raise ProviderConfigError(f"{m} mode needs a base URL (set {ENV_BASE_URL} or llm.base_url)")
            if not self.api_key_env:
                raise ProviderConfigError(f"{m} mode needs an API key environment variable name")
        elif m == "replay":
            if not self.cassette:
                raise ProviderConfigError("replay mode needs a cassette path")
        elif m.startswith("stub:"):
            _load_builtin_stubs()
            if m[5:] not in STUBS:
                raise ProviderConfigError(f"unknown stub {m[5:]!r}; registered: {', '.join(sorted(STUBS))}")
        else:
            raise ProviderConfigError(f"unknown mode {m!r}; use live, record, replay or stub:<name>")
        if self.max_retries < 0 or self.timeout <= 0:
            raise ProviderConfigError("max_retries must be >= 0 and timeout > 0")

    @classmethod
    def from_env(cls, mode: str = "live", **kw) -> "ProviderConfig":
        kw.setdefault("base_url", os.environ.get(ENV_BASE_URL, ""))
        kw.setdefault("model", os.environ.get(ENV_MODEL, "gpt-4"))
        return cls(mode=mode, **kw)

    def to_json(self) -> dict:
        # the key itself is never stored, only the variable name
        return {"mode": self.mode, "base_url": self.base_url, "model": self.model,
                "api_key_env": self.api_key_env, "timeout": self.timeout,
                "max_retries": self.max_retries, "temperature": self.temperature,
                "cassette": self.cassette}


def _load_builtin_stubs() -> None:
    from . import stubs  # noqa: F401  (registers on import)


def request_json(model: str, temperature: float, messages: list[ChatMessage]) -> dict:
    return {"model": model, "temperature": temperature, "messages": [m.to_json() for m in messages]}


def request_digest(request: dict) -> str:
    canon = json.dumps(request, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class CassetteEntry:
    index: int
    digest: str
    request: dict
    response: str

    def to_json(self) -> dict:
        return {"index": self.index, "digest": self.digest, "request": self.request, "response": self.response}


@dataclass
class Cassette:
    name: str
    entries: list[CassetteEntry] = field(default_factory=list)

    @classmethod
    def load(cls, path: str | Path) -> "Cassette":
        path = Path(path)
        entries = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                entry = CassetteEntry(int(d["index"]), d["digest"], d["request"], d["response"])
            except (ValueError, KeyError, TypeError) as exc:
                raise LLMError(f"{path}:{lineno}: malformed cassette entry ({exc})") from None
            if entry.index != len(entries):
                raise LLMError(f"{path}:{lineno}: cassette index {entry.index}, expected {len(entries)}")
            if request_digest(entry.request) != entry.digest:
                raise LLMError(f"{path}:{lineno}: digest does not match the recorded request")
            entries.append(entry)
        return cls(path.stem, entries)

    @staticmethod
    def dumps_entry(entry: CassetteEntry) -> str:
        return json.dumps(entry.to_json(), sort_keys=True, ensure_ascii=False) + "\n"


class LLMClient:
    """Sends chat requests according to a :class:`ProviderConfig`.

    When ``transcript`` is given every exchange, whatever the mode, is also
    appended there as a cassette entry.
    """

    def __init__(self, config: ProviderConfig, transcript: str | Path | None = None,
                 http: httpx.Client | None = None):
        self.config = config
        self.transcript = Path(transcript) if transcript else None
        self.calls = 0
        self._http = http
        self._replay: Cassette | None = None
        self._cursor = 0
        if config.mode == "replay":
            self._replay = Cassette.load(config.cassette)
        self._record_path = Path(config.cassette) if config.mode == "record" and config.cassette else None

    @property
    def mode(self) -> str:
        return self.config.mode

    def seek(self, index: int) -> None:
        """Position the replay cursor (used when resuming a run)."""
        self._cursor = index

    def set_transcript(self, path: str | Path | None, start_index: int = 0) -> None:
        self.transcript = Path(path) if path else None
        self.calls = start_index

    def complete(self, messages: list[ChatMessage]) -> str:
        request = request_json(self.config.model, self.config.temperature, messages)
        digest = request_digest(request)
        mode = self.config.mode
        if mode == "replay":
            response = self._replay_next(request, digest)
        elif mode.startswith("stub:"):
            response = STUBS[mode[5:]](list(messages))
        else:
            response = self._post(request)
            if self._record_path is not None:
                self._append(self._record_path, self._record_count(), digest, request, response)
        if self.transcript is not None:
            self._append(self.transcript, self.calls, digest, request, response)
        self.calls += 1
        return response

    # -- internals ---------------------------------------------------------

    def _record_count(self) -> int:
        p = self._record_path
        if p is None or not p.exists():
            return 0
        return sum(1 for line in p.read_text(encoding="utf-8").splitlines() if line.strip())

    @staticmethod
    def _append(path: Path, index: int, digest: str, request: dict, response: str) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as fh:
            fh.write(Cassette.dumps_entry(CassetteEntry(index, digest, request, response)))

    def _replay_next(self, request: dict, digest: str) -> str:
        entries = self._replay.entries
        i = self._cursor
        if i >= len(entries):
            raise CassetteExhausted(f"cassette has {len(entries)} entries; request {i} has no recording")
        entry = entries[i]
        if entry.digest != digest:
            raise _mismatch(i, entry.request, request)
        self._cursor += 1
        return entry.response

    def _post(self, request: dict) -> str:
        key = os.environ.get(self.config.api_key_env, "")
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        http = self._http or httpx.Client(timeout=self.config.timeout)
        last = ""
        try:
            for attempt in range(self.config.max_retries + 1):
                try:
                    resp = http.post(url, json=request, headers=headers, timeout=self.config.timeout)
                except httpx.TransportError as exc:
                    last = f"{type(exc).__name__}: {exc}"
                else:
                    if resp.status_code == 200:
                        try:
                            return resp.json()["choices"][0]["message"]["content"]
                        except (ValueError, KeyError, IndexError, TypeError):
                            raise TransportError("malformed chat-completion response") from None
                    last = f"HTTP {resp.status_code}"
                    if resp.status_code not in (408, 409, 429) and resp.status_code < 500:
                        raise TransportError(f"provider rejected the request: {last}")
                if attempt < self.config.max_retries:
                    time.sleep(min(0.5 * 2 ** attempt, 8.0))
                    log.warning("retrying chat completion after %s", last)
        finally:
            if self._http is None:
                http.close()
        raise TransportError(f"chat completion failed after {self.config.max_retries + 1} attempts: {last}")


def _mismatch(index: int, recorded: dict, actual: dict) -> DigestMismatch:
    for key in ("model", "temperature"):
        if recorded.get(key) != actual.get(key):
            return DigestMismatch(index, None, f"{key} differs ({recorded.get(key)!r} recorded, {actual.get(key)!r} now)")
    rec, act = recorded.get("messages", []), actual.get("messages", [])
    for j in range(max(len(rec), len(act))):
        if j >= len(rec) or j >= len(act) or rec[j] != act[j]:
            return DigestMismatch(index, j, f"prompts drifted; first differing message index {j}")
    return DigestMismatch(index, None, "digest differs")
