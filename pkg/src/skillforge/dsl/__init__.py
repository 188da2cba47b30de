"""Reward and metric languages: parsing, validation, printing, evaluation."""

from .checker import namespace, validate
from .errors import (
    ClipBoundsError,
    DomainError,
    DslError,
    DslTypeError,
    DuplicateName,
    EmptyTrajectoriesError,
    NonFiniteValue,
    ParseError,
    Span,
    UnknownIdentifier,
)
from .evaluator import MetricSummary, PerformanceReport, eval_metrics, eval_reward, evaluate
from .nodes import EvalProgram, RewardProgram
from .parser import parse_eval, parse_reward
from .printer import print_expr, print_program, program_digest

__all__ = [
    "ClipBoundsError",
    "DomainError",
    "DslError",
    "DslTypeError",
    "DuplicateName",
    "EmptyTrajectoriesError",
    "EvalProgram",
    "MetricSummary",
    "NonFiniteValue",
    "ParseError",
    "PerformanceReport",
    "RewardProgram",
    "Span",
    "UnknownIdentifier",
    "eval_metrics",
    "eval_reward",
    "evaluate",
    "namespace",
    "parse_eval",
    "parse_reward",
    "print_expr",
    "print_program",
    "program_digest",
    "validate",
]
