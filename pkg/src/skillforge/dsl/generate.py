"""Random well-typed programs for round-trip and soundness checks."""

from __future__ import annotations

import random

from .nodes import (
    AGGREGATORS,
    ARITH_OPS,
    BOOL_OPS,
    COMPARE_OPS,
    BinOp,
    Binding,
    BoolOp,
    Call,
    Compare,
    Const,
    EvalProgram,
    Expr,
    Metric,
    Name,
    Neg,
    Not,
    RewardProgram,
)

_UNARY_FUNCS = ("abs", "exp", "log", "sqrt", "tanh", "sin", "cos")
_CONSTS = (0.0, 0.5, 1.0, 2.0, 3.0, 0.01, 1e-3, 10.0, 123.25, 1e20)


def random_number(rng: random.Random) -> float:
    if rng.random() < 0.5:
        return rng.choice(_CONSTS)
    return abs(rng.uniform(0, 100)) if rng.random() < 0.8 else abs(rng.lognormvariate(0, 8))


def random_expr(rng: random.Random, names: list[str], kind: str = "number", depth: int = 4) -> Expr:
    """A random expression of ``kind`` ("number" or "bool") over ``names``."""
    if kind == "bool":
        if depth <= 0:
            return Compare(rng.choice(COMPARE_OPS), random_expr(rng, names, "number", 0),
                           random_expr(rng, names, "number", 0))
        r = rng.random()
        if r < 0.5:
            return Compare(rng.choice(COMPARE_OPS), random_expr(rng, names, "number", depth - 1),
                           random_expr(rng, names, "number", depth - 1))
        if r < 0.8:
            return BoolOp(rng.choice(BOOL_OPS), random_expr(rng, names, "bool", depth - 1),
                          random_expr(rng, names, "bool", depth - 1))
        return Not(random_expr(rng, names, "bool", depth - 1))
    if depth <= 0 or rng.random() < 0.2:
        if names and rng.random() < 0.6:
            return Name(rng.choice(names))
        return Const(random_number(rng))
    r = rng.random()
    sub = lambda: random_expr(rng, names, "number", depth - 1)  # noqa: E731
    if r < 0.45:
        return BinOp(rng.choice(ARITH_OPS), sub(), sub())
    if r < 0.55:
        return Neg(sub())
    if r < 0.75:
        return Call(rng.choice(_UNARY_FUNCS), (sub(),))
    if r < 0.85:
        return Call(rng.choice(("min", "max")), tuple(sub() for _ in range(rng.randint(2, 4))))
    if r < 0.92:
        return Call("clip", (sub(), sub(), sub()))
    return Call("if", (random_expr(rng, names, "bool", depth - 1), sub(), sub()))


def random_reward_program(rng: random.Random, names: list[str], depth: int = 4) -> RewardProgram:
    scope = list(names)
    bindings = []
    for i in range(rng.randint(0, 3)):
        name = f"v{i}"
        bindings.append(Binding(name, random_expr(rng, scope, "number", depth)))
        scope.append(name)
    return RewardProgram(tuple(bindings), random_expr(rng, scope, "number", depth))


def random_eval_program(rng: random.Random, names: list[str], depth: int = 4) -> EvalProgram:
    metrics = tuple(
        Metric(f"m{i}", rng.choice(AGGREGATORS), random_expr(rng, names, "number", depth))
        for i in range(rng.randint(1, 4))
    )
    return EvalProgram(metrics)
