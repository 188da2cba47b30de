"""Error types raised by the reward and metric languages."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Span:
    line: int
    column: int

    def __str__(self) -> str:
        return f"line {self.line}, column {self.column}"


class DslError(Exception):
    """Base class for every parse, validation and runtime error.

    ``str(err)`` is always a single line, so it can be pasted verbatim into
    a repair prompt.
    """

    category = "DslError"

    def __init__(self, message: str, span: Span | None = None):
        self.message = " ".join(message.split())
        self.span = span
        super().__init__(self.render())

    def render(self) -> str:
        where = f" at {self.span}" if self.span is not None else ""
        return f"{self.category}{where}: {self.message}"

    def with_context(self, note: str) -> "DslError":
        """Copy of this error with ``note`` appended to the message."""
        err = type(self)(f"{self.message} ({note})", self.span)
        err.__dict__.update({k: v for k, v in self.__dict__.items() if k not in ("message", "span")})
        return err


class ParseError(DslError):
    category = "ParseError"


class UnknownIdentifier(DslError):
    category = "UnknownIdentifier"

    def __init__(self, message: str, span: Span | None = None, name: str = ""):
        self.name = name
        super().__init__(message, span)


class DslTypeError(DslError):
    category = "TypeError"


class DuplicateName(DslError):
    category = "DuplicateName"

    def __init__(self, message: str, span: Span | None = None, name: str = ""):
        self.name = name
        super().__init__(message, span)


class NonFiniteValue(DslError):
    category = "NonFiniteValue"


class DomainError(DslError):
    category = "DomainError"


class ClipBoundsError(DslError):
    category = "ClipBoundsError"


class EmptyTrajectoriesError(ValueError):
    """Metric evaluation was asked to aggregate over no episodes."""
