"""Static validation of programs against an environment schema."""

from __future__ import annotations

from typing import TYPE_CHECKING

from .errors import DslTypeError, DuplicateName, UnknownIdentifier
from .nodes import (
    BinOp,
    BoolOp,
    Call,
    Compare,
    Const,
    EvalProgram,
    Expr,
    Name,
    Neg,
    Not,
    RewardProgram,
)

if TYPE_CHECKING:
    from ..envs.schema import EnvSchema

NUM = "number"
BOOL = "boolean"


def namespace(schema: "EnvSchema", for_metrics: bool = False) -> list[str]:
    """Identifiers visible to a program, in display order.

    Metric programs additionally see ``reward``, the per-step reward that was
    recorded in the trajectory.
    """
    fields = list(schema.field_names)
    names = fields + [f"prev_{f}" for f in fields]
    names += [f"a{i}" for i in range(schema.action_dim)]
    names += ["t", "dt"]
    if for_metrics:
        names.append("reward")
    return names


def infer(expr: Expr, scope: dict[str, str], available: list[str]) -> str:
    """Return the type of ``expr``; raise on unknown names or type errors."""
    if isinstance(expr, Const):
        return NUM
    if isinstance(expr, Name):
        if expr.name not in scope:
            raise UnknownIdentifier(
                f"unknown identifier '{expr.name}'; available: {', '.join(available)}",
                expr.span,
                expr.name,
            )
        return scope[expr.name]
    if isinstance(expr, Neg):
        _want(expr.operand, NUM, "operand of unary '-'", scope, available)
        return NUM
    if isinstance(expr, Not):
        _want(expr.operand, BOOL, "operand of 'not'", scope, available)
        return BOOL
    if isinstance(expr, BinOp):
        _want(expr.left, NUM, f"left operand of '{expr.op}'", scope, available)
        _want(expr.right, NUM, f"right operand of '{expr.op}'", scope, available)
        return NUM
    if isinstance(expr, Compare):
        _want(expr.left, NUM, f"left operand of '{expr.op}'", scope, available)
        _want(expr.right, NUM, f"right operand of '{expr.op}'", scope, available)
        return BOOL
    if isinstance(expr, BoolOp):
        _want(expr.left, BOOL, f"left operand of '{expr.op}'", scope, available)
        _want(expr.right, BOOL, f"right operand of '{expr.op}'", scope, available)
        return BOOL
    if isinstance(expr, Call):
        if expr.func == "if":
            cond, a, b = expr.args
            _want(cond, BOOL, "condition of if()", scope, available)
            _want(a, NUM, "second argument of if()", scope, available)
            _want(b, NUM, "third argument of if()", scope, available)
            return NUM
        for i, arg in enumerate(expr.args):
            _want(arg, NUM, f"argument {i + 1} of {expr.func}()", scope, available)
        return NUM
    raise TypeError(f"not an expression node: {expr!r}")


def _want(expr: Expr, expected: str, role: str, scope: dict[str, str], available: list[str]) -> None:
    got = infer(expr, scope, available)
    if got != expected:
        hint = " (booleans are not numbers; use if(cond, 1, 0))" if got == BOOL else ""
        raise DslTypeError(f"{role} must be a {expected}, got a {got}{hint}", expr.span)


def validate(program: RewardProgram | EvalProgram, schema: "EnvSchema") -> None:
    """Check every identifier and type in ``program`` against ``schema``.

    Returns ``None`` when the program is valid, otherwise raises
    :class:`UnknownIdentifier`, :class:`DslTypeError` or
    :class:`DuplicateName`. A program that passes can't raise either of the
    first two at evaluation time.
    """
    if isinstance(program, RewardProgram):
        available = namespace(schema)
        scope = dict.fromkeys(available, NUM)
        for b in program.bindings:
            if b.name in scope:
                raise DuplicateName(
                    f"binding '{b.name}' shadows an existing name", b.span, b.name
                )
            scope[b.name] = infer(b.expr, scope, available)
            available = available + [b.name]
        _want(program.reward, NUM, "reward expression", scope, available)
        return
    if isinstance(program, EvalProgram):
        available = namespace(schema, for_metrics=True)
        scope = dict.fromkeys(available, NUM)
        seen: set[str] = set()
        for m in program.metrics:
            if m.name in seen:
                raise DuplicateName(f"metric '{m.name}' is defined twice", m.span, m.name)
            seen.add(m.name)
            _want(m.expr, NUM, f"expression of metric '{m.name}'", scope, available)
        return
    raise TypeError(f"not a program: {program!r}")
