"""Tokenizer and precedence-climbing parser for the reward and metric languages.

Both languages share one expression grammar (see docs/grammar.md). Statements
are newline separated; newlines inside parentheses are ignored.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .errors import DuplicateName, ParseError, Span
from .nodes import (
    AGGREGATORS,
    COMPARE_OPS,
    FUNCTIONS,
    RESERVED,
    Binding,
    BinOp,
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
    children,
)

MAX_DEPTH = 200

NUMBER_RE = re.compile(r"[0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?")
IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
TWO_CHAR_OPS = ("<=", ">=", "==")
ONE_CHAR_OPS = "+-*/^<>(),="

# binding power of infix operators handled by the climbing loop; `^` and the
# prefix operators are handled separately
INFIX_PREC = {
    "or": 1,
    "and": 2,
    "<": 4, "<=": 4, ">": 4, ">=": 4, "==": 4,
    "+": 5, "-": 5,
    "*": 6, "/": 6,
}
NOT_PREC = 3

# words that can never appear as a plain name inside an expression
EXPR_KEYWORDS = frozenset({"let", "metric", "and", "or", "not"})


@dataclass(frozen=True)
class Token:
    kind: str  # NUMBER, IDENT, OP, NEWLINE, EOF
    text: str
    span: Span

    def describe(self) -> str:
        if self.kind == "EOF":
            return "end of input"
        if self.kind == "NEWLINE":
            return "end of line"
        return f"'{self.text}'"


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    i, line, line_start, depth = 0, 1, 0, 0
    n = len(source)
    while i < n:
        c = source[i]
        col = i - line_start + 1
        if c == "\n":
            if depth == 0:
                tokens.append(Token("NEWLINE", "\n", Span(line, col)))
            i += 1
            line += 1
            line_start = i
            continue
        if c in " \t\r":
            i += 1
            continue
        if c == "#":
            end = source.find("\n", i)
            i = n if end < 0 else end
            continue
        span = Span(line, col)
        if c.isascii() and c.isdigit():
            m = NUMBER_RE.match(source, i)
            tokens.append(Token("NUMBER", m.group(), span))
            i = m.end()
            continue
        if c.isascii() and (c.isalpha() or c == "_"):
            m = IDENT_RE.match(source, i)
            tokens.append(Token("IDENT", m.group(), span))
            i = m.end()
            continue
        two = source[i:i + 2]
        if two in TWO_CHAR_OPS:
            tokens.append(Token("OP", two, span))
            i += 2
            continue
        if c in ONE_CHAR_OPS:
            if c == "(":
                depth += 1
            elif c == ")":
                depth = max(0, depth - 1)
            tokens.append(Token("OP", c, span))
            i += 1
            continue
        raise ParseError(f"unexpected character {c!r}", span)
    tokens.append(Token("EOF", "", Span(line, n - line_start + 1)))
    return tokens


def _height(expr: Expr) -> int:
    """Tree height, computed without recursion."""
    best = 0
    stack = [(expr, 1)]
    while stack:
        node, h = stack.pop()
        best = max(best, h)
        if best > MAX_DEPTH:
            return best
        stack.extend((c, h + 1) for c in children(node))
    return best


class Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.pos = 0
        self.depth = 0

    # -- token helpers -------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "EOF":
            self.pos += 1
        return t

    def at_op(self, text: str) -> bool:
        return self.tok.kind == "OP" and self.tok.text == text

    def at_word(self, word: str) -> bool:
        return self.tok.kind == "IDENT" and self.tok.text == word

    def expect_op(self, text: str, what: str) -> Token:
        if not self.at_op(text):
            raise ParseError(f"expected {what}, found {self.tok.describe()}", self.tok.span)
        return self.advance()

    def expect_word(self, word: str) -> Token:
        if not self.at_word(word):
            raise ParseError(f"expected '{word}', found {self.tok.describe()}", self.tok.span)
        return self.advance()

    def skip_newlines(self) -> None:
        while self.tok.kind == "NEWLINE":
            self.advance()

    def end_statement(self) -> None:
        if self.tok.kind not in ("NEWLINE", "EOF"):
            raise ParseError(f"expected end of line, found {self.tok.describe()}", self.tok.span)
        self.skip_newlines()

    def new_name(self, role: str) -> Token:
        t = self.tok
        if t.kind != "IDENT":
            raise ParseError(f"expected {role} name, found {t.describe()}", t.span)
        if t.text in RESERVED:
            raise ParseError(f"'{t.text}' is a reserved word and cannot be used as a {role} name", t.span)
        return self.advance()

    def enter(self) -> None:
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise ParseError("expression is nested too deeply", self.tok.span)

    # -- expressions ---------------------------------------------------

    def expression(self) -> Expr:
        start = self.tok.span
        expr = self.binary(1)
        if _height(expr) > MAX_DEPTH:
            raise ParseError("expression is nested too deeply", start)
        return expr

    def binary(self, min_prec: int) -> Expr:
        self.enter()
        try:
            if self.at_word("not"):
                t = self.advance()
                if min_prec > NOT_PREC:
                    raise ParseError("'not' must be parenthesized here", t.span)
                left: Expr = Not(self.binary(NOT_PREC), t.span)
            else:
                left = self.unary()
            while True:
                t = self.tok
                if t.kind not in ("OP", "IDENT") or t.text not in INFIX_PREC:
                    return left
                prec = INFIX_PREC[t.text]
                if prec < min_prec:
                    return left
                self.advance()
                right = self.binary(prec + 1)
                if t.text in ("and", "or"):
                    left = BoolOp(t.text, left, right, t.span)
                elif t.text in COMPARE_OPS:
                    left = Compare(t.text, left, right, t.span)
                    nxt = self.tok
                    if nxt.kind == "OP" and nxt.text in COMPARE_OPS:
                        raise ParseError("comparisons cannot be chained; use 'and'", nxt.span)
                else:
                    left = BinOp(t.text, left, right, t.span)
        finally:
            self.depth -= 1

    def unary(self) -> Expr:
        self.enter()
        try:
            if self.at_op("-"):
                t = self.advance()
                return Neg(self.unary(), t.span)
            return self.power()
        finally:
            self.depth -= 1

    def power(self) -> Expr:
        base = self.primary()
        if self.at_op("^"):
            t = self.advance()
            return BinOp("^", base, self.unary(), t.span)
        return base

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "NUMBER":
            self.advance()
            value = float(t.text)
            if not math.isfinite(value):
                raise ParseError(f"numeric literal {t.text} is out of range", t.span)
            return Const(value, t.span)
        if t.kind == "IDENT":
            if t.text in FUNCTIONS:
                return self.call()
            if t.text in EXPR_KEYWORDS:
                raise ParseError(f"unexpected keyword '{t.text}'", t.span)
            self.advance()
            if self.at_op("("):
                raise ParseError(
                    f"unknown function '{t.text}'; available: {', '.join(FUNCTIONS)}", t.span
                )
            return Name(t.text, t.span)
        if self.at_op("("):
            self.advance()
            inner = self.binary(1)
            self.close_paren(t)
            return inner
        raise ParseError(f"expected an expression, found {t.describe()}", t.span)

    def close_paren(self, opener: Token) -> None:
        if self.at_op(")"):
            self.advance()
            return
        if self.tok.kind in ("EOF", "NEWLINE"):
            raise ParseError(f"unclosed parenthesis opened at {opener.span}", opener.span)
        raise ParseError(f"expected ')' or an operator, found {self.tok.describe()}", self.tok.span)

    def call(self) -> Expr:
        name_tok = self.advance()
        func = name_tok.text
        if not self.at_op("("):
            raise ParseError(f"function '{func}' must be called with parentheses", name_tok.span)
        opener = self.advance()
        args = [self.binary(1)]
        while self.at_op(","):
            self.advance()
            args.append(self.binary(1))
        self.close_paren(opener)
        lo, hi = FUNCTIONS[func]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = f"{lo}" if lo == hi else f"at least {lo}"
            raise ParseError(f"{func}() takes {want} argument(s), got {len(args)}", name_tok.span)
        return Call(func, tuple(args), name_tok.span)

    # -- programs ------------------------------------------------------

    def reward_program(self, source: str) -> RewardProgram:
        self.skip_newlines()
        bindings: list[Binding] = []
        seen: set[str] = set()
        while self.at_word("let"):
            self.advance()
            name = self.new_name("binding")
            if name.text in seen:
                raise DuplicateName(f"binding '{name.text}' is defined twice", name.span, name.text)
            seen.add(name.text)
            self.expect_op("=", "'='")
            bindings.append(Binding(name.text, self.expression(), name.span))
            self.end_statement()
        if not self.at_word("reward"):
            if self.tok.kind == "EOF":
                raise ParseError("missing 'reward = ...' statement", self.tok.span)
            raise ParseError(f"expected 'let' or 'reward', found {self.tok.describe()}", self.tok.span)
        self.advance()
        self.expect_op("=", "'='")
        reward = self.expression()
        self.end_statement()
        if self.tok.kind != "EOF":
            raise ParseError(
                f"'reward' must be the last statement, found {self.tok.describe()}", self.tok.span
            )
        return RewardProgram(tuple(bindings), reward, source)

    def eval_program(self, source: str) -> EvalProgram:
        self.skip_newlines()
        metrics: list[Metric] = []
        seen: set[str] = set()
        while self.tok.kind != "EOF":
            self.expect_word("metric")
            name = self.new_name("metric")
            if name.text in seen:
                raise DuplicateName(f"metric '{name.text}' is defined twice", name.span, name.text)
            seen.add(name.text)
            self.expect_op("=", "'='")
            agg = self.tok
            if agg.kind != "IDENT" or agg.text not in AGGREGATORS:
                raise ParseError(
                    f"unknown aggregator {agg.describe()}; expected one of {', '.join(AGGREGATORS)}",
                    agg.span,
                )
            self.advance()
            opener = self.expect_op("(", f"'(' after aggregator '{agg.text}'")
            expr = self.expression()
            self.close_paren(opener)
            metrics.append(Metric(name.text, agg.text, expr, name.span))
            self.end_statement()
        if not metrics:
            raise ParseError("program defines no metrics; expected at least one 'metric' line", self.tok.span)
        return EvalProgram(tuple(metrics), source)


def _decode(source: str | bytes) -> str:
    if isinstance(source, bytes):
        try:
            return source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"source is not valid UTF-8 (byte offset {exc.start})") from None
    return source


def parse_reward(source: str | bytes) -> RewardProgram:
    """Parse reward-language source into a :class:`RewardProgram`.

    Raises :class:`ParseError` (or :class:`DuplicateName` for repeated
    bindings) on any grammar violation.
    """
    text = _decode(source)
    return Parser(text).reward_program(text)


def parse_eval(source: str | bytes) -> EvalProgram:
    """Parse metric-language source into an :class:`EvalProgram`."""
    text = _decode(source)
    return Parser(text).eval_program(text)
