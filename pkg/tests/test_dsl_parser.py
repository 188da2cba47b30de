"""Parser, printer and error reporting of the reward and metric languages."""

import pytest
from hypothesis import given, strategies as st

from skillforge.dsl import (
    DuplicateName,
    ParseError,
    Span,
    parse_eval,
    parse_reward,
    print_expr,
    print_program,
    program_digest,
)
from skillforge.dsl.nodes import BinOp, BoolOp, Call, Compare, Const, Name, Neg, Not
from skillforge.dsl.parser import MAX_DEPTH


def expr_of(src):
    return parse_reward(f"reward = {src}").reward


def test_parse_example_program():
    prog = parse_reward("let u = cos(theta)\nreward = u - 0.01 * a0^2")
    assert print_program(prog) == "let u = cos(theta)\nreward = u - (0.01 * (a0 ^ 2.0))\n"


def test_precedence_and_associativity():
    assert expr_of("1 - 2 - 3") == BinOp("-", BinOp("-", Const(1.0), Const(2.0)), Const(3.0))
    assert expr_of("2 ^ 3 ^ 2") == BinOp("^", Const(2.0), BinOp("^", Const(3.0), Const(2.0)))
    assert expr_of("1 + 2 * 3") == BinOp("+", Const(1.0), BinOp("*", Const(2.0), Const(3.0)))
    assert expr_of("-x ^ 2") == Neg(BinOp("^", Name("x"), Const(2.0)))
    assert expr_of("2 ^ -1") == BinOp("^", Const(2.0), Neg(Const(1.0)))


def test_boolean_precedence():
    e = expr_of("if(not x < 1 and y > 2 or z == 0, 1, 0)").args[0]
    assert e == BoolOp(
        "or",
        BoolOp("and", Not(Compare("<", Name("x"), Const(1.0))), Compare(">", Name("y"), Const(2.0))),
        Compare("==", Name("z"), Const(0.0)),
    )


def test_newlines_inside_parentheses_are_ignored():
    prog = parse_reward("reward = max(\n  x,\n  y\n)\n")
    assert prog.reward == Call("max", (Name("x"), Name("y")))


def test_comments_and_blank_lines():
    prog = parse_reward("# header\n\nlet a = 1  # one\n\nreward = a\n# trailing\n")
    assert [b.name for b in prog.bindings] == ["a"]


@pytest.mark.parametrize("src, fragment, span", [
    ("reward = (x + 1", "unclosed parenthesis opened at line 1, column 10", Span(1, 10)),
    ("reward = foo(x)", "unknown function 'foo'", Span(1, 10)),
    ("reward = 1 < 2 < 3", "cannot be chained", Span(1, 16)),
    ("reward = x $ 2", "unexpected character", Span(1, 12)),
    ("let x = 1", "missing 'reward", Span(1, 10)),
    ("reward = 1\nlet y = 2", "must be the last statement", Span(2, 1)),
    ("let abs = 1\nreward = abs", "reserved word", Span(1, 5)),
    ("reward = clip(x, 1)", "clip() takes 3 argument(s), got 2", Span(1, 10)),
    ("reward = min(x)", "at least 2", Span(1, 10)),
    ("reward = 1e999", "out of range", Span(1, 10)),
    ("reward = 1 + not x", "'not' must be parenthesized", Span(1, 14)),
])
def test_parse_errors_carry_spans(src, fragment, span):
    with pytest.raises(ParseError) as info:
        parse_reward(src)
    assert fragment in str(info.value)
    assert info.value.span == span
    assert "\n" not in str(info.value)


def test_unknown_function_lists_available():
    with pytest.raises(ParseError, match="available: abs, min, max"):
        parse_reward("reward = foo(1)")


def test_duplicate_binding():
    with pytest.raises(DuplicateName) as info:
        parse_reward("let a = 1\nlet a = 2\nreward = a")
    assert info.value.name == "a" and info.value.span == Span(2, 5)


def test_eval_program_parses():
    prog = parse_eval("metric final_x = final(x)\nmetric steps = sum(1)\n")
    assert prog.names == ["final_x", "steps"]
    assert prog.metrics[0].aggregator == "final"


def test_eval_program_errors():
    with pytest.raises(ParseError, match="defines no metrics"):
        parse_eval("# nothing\n")
    with pytest.raises(ParseError, match="unknown aggregator 'median'"):
        parse_eval("metric m = median(x)")
    with pytest.raises(DuplicateName):
        parse_eval("metric m = mean(x)\nmetric m = max(x)")


def test_reward_is_a_name_inside_metrics():
    prog = parse_eval("metric total = sum(reward)")
    assert prog.metrics[0].expr == Name("reward")


def test_bytes_input_and_invalid_utf8():
    assert parse_reward(b"reward = 1").reward == Const(1.0)
    with pytest.raises(ParseError, match="UTF-8"):
        parse_reward(b"reward = \xff")


def test_deep_nesting_is_rejected_not_crashing():
    with pytest.raises(ParseError, match="nested too deeply"):
        parse_reward("reward = " + "(" * (MAX_DEPTH + 5) + "1" + ")" * (MAX_DEPTH + 5))
    with pytest.raises(ParseError, match="nested too deeply"):
        parse_reward("reward = " + "-" * 5000 + "1")
    with pytest.raises(ParseError, match="nested too deeply"):
        parse_reward("reward = " + " + ".join(["1"] * 1000))


def test_printer_numbers_round_trip_exactly():
    for v in (0.1, 1e-300, 123456789.123, 2.5e20, 0.0):
        assert expr_of(print_expr(Const(v))) == Const(v)


def test_printer_rejects_negative_constants():
    with pytest.raises(ValueError):
        print_expr(Const(-1.0))


def test_digest_ignores_formatting():
    a = parse_reward("reward = x+1  # c")
    b = parse_reward("reward = (x + 1.0)")
    assert program_digest(a) == program_digest(b)
    assert program_digest(a) != program_digest(parse_reward("reward = x + 2"))


def test_spans_do_not_affect_equality():
    assert parse_reward("reward = x") == parse_reward("\n\nreward   =    x")


@given(st.text(max_size=200))
def test_arbitrary_text_only_raises_parse_errors(text):
    for parse in (parse_reward, parse_eval):
        try:
            parse(text)
        except (ParseError, DuplicateName):
            pass
