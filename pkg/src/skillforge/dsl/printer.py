"""Canonical source rendering.

Every compound sub-expression is parenthesized, so the printed text reparses
to the same tree without relying on precedence rules. Numbers use the
shortest decimal that round-trips (Python's ``repr``).
"""

from __future__ import annotations

import hashlib

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


def format_number(value: float) -> str:
    if value < 0 or (value == 0 and str(value).startswith("-")):
        raise ValueError(f"constants are non-negative in the AST, got {value!r}")
    return repr(float(value))


def print_expr(expr: Expr, top: bool = True) -> str:
    if isinstance(expr, Const):
        return format_number(expr.value)
    if isinstance(expr, Name):
        return expr.name
    if isinstance(expr, Call):
        return f"{expr.func}({', '.join(print_expr(a) for a in expr.args)})"
    if isinstance(expr, Neg):
        text = f"-{print_expr(expr.operand, top=False)}"
    elif isinstance(expr, Not):
        text = f"not {print_expr(expr.operand, top=False)}"
    elif isinstance(expr, (BinOp, Compare, BoolOp)):
        text = f"{print_expr(expr.left, top=False)} {expr.op} {print_expr(expr.right, top=False)}"
    else:
        raise TypeError(f"not an expression node: {expr!r}")
    return text if top else f"({text})"


def print_program(program: RewardProgram | EvalProgram) -> str:
    """Render a program in canonical form, one statement per line."""
    lines: list[str] = []
    if isinstance(program, RewardProgram):
        lines += [f"let {b.name} = {print_expr(b.expr)}" for b in program.bindings]
        lines.append(f"reward = {print_expr(program.reward)}")
    elif isinstance(program, EvalProgram):
        lines += [f"metric {m.name} = {m.aggregator}({print_expr(m.expr)})" for m in program.metrics]
    else:
        raise TypeError(f"not a program: {program!r}")
    return "\n".join(lines) + "\n"


def program_digest(program: RewardProgram | EvalProgram) -> str:
    """SHA-256 of the canonical text; stable across formatting differences."""
    return hashlib.sha256(print_program(program).encode("utf-8")).hexdigest()
