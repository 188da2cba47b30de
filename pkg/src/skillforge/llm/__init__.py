"""Chat-completion client, prompt builders and response extraction."""

from .client import (
    ENV_API_KEY,
    ENV_BASE_URL,
    ENV_MODEL,
    STUBS,
    Cassette,
    CassetteEntry,
    CassetteExhausted,
    DigestMismatch,
    LLMClient,
    LLMError,
    ProviderConfig,
    ProviderConfigError,
    TransportError,
    register_stub,
    request_digest,
    request_json,
)
from .extract import ExtractionError, PeVerdict, VerdictParseError, extract_code_block, parse_pe_verdict
from .messages import ChatMessage
from .prompts import (
    SYSTEM_PROMPTS,
    TEMPLATE_VERSION,
    TrainingSummary,
    build_ee_prompt,
    build_efg_prompt,
    build_pe_prompt,
    build_rfg_prompt,
    parse_sections,
    render_report,
    stage_of,
)
from .stubs import ScriptedResponder

__all__ = [
    "ENV_API_KEY",
    "ENV_BASE_URL",
    "ENV_MODEL",
    "STUBS",
    "SYSTEM_PROMPTS",
    "TEMPLATE_VERSION",
    "Cassette",
    "CassetteEntry",
    "CassetteExhausted",
    "ChatMessage",
    "DigestMismatch",
    "ExtractionError",
    "LLMClient",
    "LLMError",
    "PeVerdict",
    "ProviderConfig",
    "ProviderConfigError",
    "ScriptedResponder",
    "TrainingSummary",
    "TransportError",
    "VerdictParseError",
    "build_ee_prompt",
    "build_efg_prompt",
    "build_pe_prompt",
    "build_rfg_prompt",
    "extract_code_block",
    "parse_pe_verdict",
    "parse_sections",
    "register_stub",
    "render_report",
    "request_digest",
    "request_json",
    "stage_of",
]
