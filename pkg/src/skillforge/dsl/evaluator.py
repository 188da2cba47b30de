"""Runtime evaluation of reward programs and metric programs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol

from .errors import (
    ClipBoundsError,
    DomainError,
    DslTypeError,
    EmptyTrajectoriesError,
    NonFiniteValue,
    UnknownIdentifier,
)
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

_UNARY = {
    "abs": abs,
    "exp": math.exp,
    "tanh": math.tanh,
    "sin": math.sin,
    "cos": math.cos,
}


def _finite(value: float, expr: Expr, what: str) -> float:
    if not math.isfinite(value):
        raise NonFiniteValue(f"{what} produced a non-finite value", expr.span)
    return value


def _num(expr: Expr, env: Mapping[str, float | bool]) -> float:
    v = evaluate(expr, env)
    if isinstance(v, bool):
        raise DslTypeError("boolean used where a number is required", expr.span)
    return v


def _bool(expr: Expr, env: Mapping[str, float | bool]) -> bool:
    v = evaluate(expr, env)
    if not isinstance(v, bool):
        raise DslTypeError("number used where a boolean is required", expr.span)
    return v


def _power(base: float, exponent: float, expr: Expr) -> float:
    if base == 0.0 and exponent < 0:
        raise NonFiniteValue("zero raised to a negative power", expr.span)
    try:
        value = math.pow(base, exponent)
    except OverflowError:
        raise NonFiniteValue("'^' overflowed", expr.span) from None
    except ValueError:
        raise DomainError(
            f"negative base {base!r} raised to non-integer power {exponent!r}", expr.span
        ) from None
    return _finite(value, expr, "'^'")


def evaluate(expr: Expr, env: Mapping[str, float | bool]) -> float | bool:
    """Evaluate one expression. ``if``, ``and`` and ``or`` are lazy."""
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Name):
        try:
            return env[expr.name]
        except KeyError:
            raise UnknownIdentifier(
                f"unknown identifier '{expr.name}' at evaluation time", expr.span, expr.name
            ) from None
    if isinstance(expr, BinOp):
        a = _num(expr.left, env)
        b = _num(expr.right, env)
        op = expr.op
        if op == "+":
            return _finite(a + b, expr, "'+'")
        if op == "-":
            return _finite(a - b, expr, "'-'")
        if op == "*":
            return _finite(a * b, expr, "'*'")
        if op == "/":
            if b == 0.0:
                raise NonFiniteValue("division by zero", expr.span)
            return _finite(a / b, expr, "'/'")
        return _power(a, b, expr)
    if isinstance(expr, Neg):
        return -_num(expr.operand, env)
    if isinstance(expr, Compare):
        a = _num(expr.left, env)
        b = _num(expr.right, env)
        op = expr.op
        if op == "<":
            return a < b
        if op == "<=":
            return a <= b
        if op == ">":
            return a > b
        if op == ">=":
            return a >= b
        return a == b
    if isinstance(expr, BoolOp):
        left = _bool(expr.left, env)
        if expr.op == "and":
            return left and _bool(expr.right, env)
        return left or _bool(expr.right, env)
    if isinstance(expr, Not):
        return not _bool(expr.operand, env)
    if isinstance(expr, Call):
        return _call(expr, env)
    raise TypeError(f"not an expression node: {expr!r}")


def _call(expr: Call, env: Mapping[str, float | bool]) -> float:
    f = expr.func
    if f == "if":
        cond, a, b = expr.args
        return _num(a, env) if _bool(cond, env) else _num(b, env)
    args = [_num(a, env) for a in expr.args]
    if f in _UNARY:
        try:
            return _finite(_UNARY[f](args[0]), expr, f"{f}()")
        except OverflowError:
            raise NonFiniteValue(f"{f}() overflowed", expr.span) from None
    if f == "min":
        return min(args)
    if f == "max":
        return max(args)
    if f == "log":
        if args[0] <= 0:
            raise DomainError(f"log() of non-positive value {args[0]!r}", expr.span)
        return math.log(args[0])
    if f == "sqrt":
        if args[0] < 0:
            raise DomainError(f"sqrt() of negative value {args[0]!r}", expr.span)
        return math.sqrt(args[0])
    if f == "clip":
        x, lo, hi = args
        if lo > hi:
            raise ClipBoundsError(f"clip() lower bound {lo!r} exceeds upper bound {hi!r}", expr.span)
        return min(max(x, lo), hi)
    raise TypeError(f"unknown function {f!r}")


def eval_reward(program: RewardProgram, ctx: Mapping[str, float]) -> float:
    """Evaluate a reward program on one transition context.

    ``ctx`` maps next-state fields (bare), previous-state fields
    (``prev_``-prefixed), action components ``a0..``, ``t`` and ``dt`` to
    numbers.
    """
    env: dict[str, float | bool] = dict(ctx)
    for b in program.bindings:
        env[b.name] = evaluate(b.expr, env)
    return _num(program.reward, env)


class HasContexts(Protocol):
    env_name: str

    def contexts(self) -> Iterable[Mapping[str, float]]: ...


@dataclass(frozen=True)
class MetricSummary:
    values: tuple[float, ...]
    mean: float
    std: float

    def to_json(self) -> dict:
        return {"values": list(self.values), "mean": self.mean, "std": self.std}


@dataclass(frozen=True)
class PerformanceReport:
    metrics: dict[str, MetricSummary]
    episodes: int
    env_name: str
    checkpoint_id: str = ""
    order: tuple[str, ...] = field(default=())

    def to_json(self) -> dict:
        return {
            "env_name": self.env_name,
            "checkpoint_id": self.checkpoint_id,
            "episodes": self.episodes,
            "metrics": {name: self.metrics[name].to_json() for name in self.order or self.metrics},
            "order": list(self.order or self.metrics),
        }

    @classmethod
    def from_json(cls, data: dict) -> "PerformanceReport":
        metrics = {
            name: MetricSummary(tuple(float(v) for v in m["values"]), float(m["mean"]), float(m["std"]))
            for name, m in data["metrics"].items()
        }
        return cls(metrics, int(data["episodes"]), data["env_name"], data.get("checkpoint_id", ""),
                   tuple(data.get("order", metrics)))


def mean_std(values: list[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    n = len(values)
    mu = math.fsum(values) / n
    var = math.fsum((v - mu) * (v - mu) for v in values) / n
    return mu, math.sqrt(var)


def aggregate(name: str, values: list[float]) -> float:
    if name == "mean":
        return math.fsum(values) / len(values)
    if name == "sum":
        return math.fsum(values)
    if name == "min":
        return min(values)
    if name == "max":
        return max(values)
    if name == "final":
        return values[-1]
    if name == "std":
        return mean_std(values)[1]
    raise ValueError(f"unknown aggregator {name!r}")


def eval_metrics(
    program: EvalProgram, trajectories: list[HasContexts], checkpoint_id: str = ""
) -> PerformanceReport:
    """Evaluate every metric on every episode and summarize across episodes."""
    if not trajectories:
        raise EmptyTrajectoriesError("eval_metrics needs at least one trajectory")
    per_metric: dict[str, list[float]] = {m.name: [] for m in program.metrics}
    for traj in trajectories:
        contexts = list(traj.contexts())
        if not contexts:
            raise EmptyTrajectoriesError("trajectory has no steps")
        for m in program.metrics:
            series = [_num(m.expr, ctx) for ctx in contexts]
            try:
                value = aggregate(m.aggregator, series)
            except (OverflowError, ValueError):
                value = math.inf
            if not math.isfinite(value):
                raise NonFiniteValue(f"aggregate {m.aggregator}() of metric '{m.name}' is not finite", m.span)
            per_metric[m.name].append(value)
    summaries = {}
    for name, values in per_metric.items():
        try:
            mu, sd = mean_std(values)
        except (OverflowError, ValueError):
            mu = sd = math.inf
        if not (math.isfinite(mu) and math.isfinite(sd)):
            raise NonFiniteValue(f"cross-episode summary of metric '{name}' is not finite")
        summaries[name] = MetricSummary(tuple(values), mu, sd)
    return PerformanceReport(
        summaries, len(trajectories), trajectories[0].env_name, checkpoint_id, tuple(per_metric)
    )
