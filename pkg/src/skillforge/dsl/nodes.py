"""AST node types shared by the reward and metric languages.

Spans are excluded from equality, so two trees compare equal when they are
structurally identical regardless of where they were parsed from.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import Span

NO_SPAN = Span(0, 0)

ARITH_OPS = ("+", "-", "*", "/", "^")
COMPARE_OPS = ("<", "<=", ">", ">=", "==")
BOOL_OPS = ("and", "or")

# name -> (min args, max args); None means unbounded
FUNCTIONS: dict[str, tuple[int, int | None]] = {
    "abs": (1, 1),
    "min": (2, None),
    "max": (2, None),
    "exp": (1, 1),
    "log": (1, 1),
    "sqrt": (1, 1),
    "tanh": (1, 1),
    "sin": (1, 1),
    "cos": (1, 1),
    "clip": (3, 3),
    "if": (3, 3),
}

AGGREGATORS = ("mean", "sum", "min", "max", "final", "std")

KEYWORDS = frozenset({"let", "reward", "metric", "and", "or", "not"})
RESERVED = KEYWORDS | frozenset(FUNCTIONS)


@dataclass(frozen=True)
class Const:
    value: float
    span: Span = field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class Name:
    name: str
    span: Span = field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    span: Span = field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class Not:
    operand: "Expr"
    span: Span = field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    span: Span = field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Expr"
    right: "Expr"
    span: Span = field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class BoolOp:
    op: str
    left: "Expr"
    right: "Expr"
    span: Span = field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]
    span: Span = field(default=NO_SPAN, compare=False, repr=False)


Expr = Const | Name | Neg | Not | BinOp | Compare | BoolOp | Call


@dataclass(frozen=True)
class Binding:
    name: str
    expr: Expr
    span: Span = field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class RewardProgram:
    bindings: tuple[Binding, ...]
    reward: Expr
    source: str = field(default="", compare=False, repr=False)


@dataclass(frozen=True)
class Metric:
    name: str
    aggregator: str
    expr: Expr
    span: Span = field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class EvalProgram:
    metrics: tuple[Metric, ...]
    source: str = field(default="", compare=False, repr=False)

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.metrics]


def children(node: Expr) -> tuple[Expr, ...]:
    if isinstance(node, (Const, Name)):
        return ()
    if isinstance(node, (Neg, Not)):
        return (node.operand,)
    if isinstance(node, (BinOp, Compare, BoolOp)):
        return (node.left, node.right)
    return node.args


def walk(node: Expr):
    """Yield ``node`` and all its descendants, depth first."""
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(children(n)))
