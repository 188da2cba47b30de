"""Validation, evaluation and metric aggregation."""

import math
import statistics

import pytest
from hypothesis import given, settings, strategies as st

from skillforge.dsl import (
    ClipBoundsError,
    DomainError,
    DslError,
    DslTypeError,
    DuplicateName,
    EmptyTrajectoriesError,
    NonFiniteValue,
    PerformanceReport,
    UnknownIdentifier,
    eval_metrics,
    eval_reward,
    namespace,
    parse_eval,
    parse_reward,
    print_program,
    validate,
)
from skillforge.dsl.nodes import Call
from skillforge.envs import schema

from strategies import eval_programs, reward_programs

PM = schema("pointmass")
CP = schema("cartpole")


def ctx(**kw):
    base = {n: 0.0 for n in namespace(CP)}
    base.update(kw)
    return base


def run(src, **kw):
    prog = parse_reward(src)
    validate(prog, CP)
    return eval_reward(prog, ctx(**kw))


def test_namespace_lists_fields_previous_actions_and_time():
    assert namespace(PM) == ["x", "vx", "prev_x", "prev_vx", "a0", "t", "dt"]
    assert namespace(PM, for_metrics=True)[-1] == "reward"


def test_unknown_identifier_lists_names():
    with pytest.raises(UnknownIdentifier) as info:
        validate(parse_reward("reward = torso_velocity"), PM)
    assert info.value.name == "torso_velocity"
    assert "available: x, vx, prev_x, prev_vx, a0, t, dt" in str(info.value)
    assert str(info.value).startswith("UnknownIdentifier at line 1, column 10")


def test_boolean_is_not_a_number():
    with pytest.raises(DslTypeError, match=r"use if\(cond, 1, 0\)"):
        validate(parse_reward("reward = (x > 0) + 1"), PM)
    with pytest.raises(DslTypeError):
        validate(parse_reward("reward = x > 0"), PM)
    with pytest.raises(DslTypeError, match="condition of if"):
        validate(parse_reward("reward = if(x, 1, 0)"), PM)
    with pytest.raises(DslTypeError):
        validate(parse_eval("metric m = mean(not (x > 1))"), PM)


def test_binding_cannot_shadow_environment_name():
    with pytest.raises(DuplicateName):
        validate(parse_reward("let x = 1\nreward = x"), PM)


def test_bindings_see_earlier_bindings_only():
    validate(parse_reward("let a = x\nlet b = a * 2\nreward = b"), PM)
    with pytest.raises(UnknownIdentifier):
        validate(parse_reward("let a = b\nlet b = 1\nreward = a"), PM)


def test_reward_name_only_in_metrics():
    validate(parse_eval("metric r = sum(reward)"), PM)
    with pytest.raises(UnknownIdentifier):
        validate(parse_reward("reward = reward"), PM)


def test_arithmetic_and_functions():
    assert run("reward = 1 + 2 * 3 - 4 / 2") == 5.0
    assert run("reward = 2 ^ 10") == 1024.0
    assert run("reward = -2 ^ 2") == -4.0
    assert run("reward = clip(x, -1, 1)", x=5.0) == 1.0
    assert run("reward = min(3, 1, 2) + max(3, 1, 2)") == 4.0
    assert run("reward = if(x > 0, 1, -1)", x=-0.5) == -1.0
    assert run("reward = abs(-3) + sqrt(4) + log(exp(1))") == 6.0
    assert run("reward = tanh(0) + sin(0) + cos(0)") == 1.0


def test_lazy_branches_skip_errors():
    assert run("reward = if(x > 0, log(x), 0)", x=-1.0) == 0.0
    assert run("reward = if(x > 0 and log(x) > 0, 1, 0)", x=-1.0) == 0.0
    assert run("reward = if(x < 0 or log(x) > 0, 1, 0)", x=-1.0) == 1.0


@pytest.mark.parametrize("src, err, kw", [
    ("reward = 1 / x", NonFiniteValue, {"x": 0.0}),
    ("reward = exp(x)", NonFiniteValue, {"x": 1000.0}),
    ("reward = x * x", NonFiniteValue, {"x": 1e200}),
    ("reward = 0 ^ -1", NonFiniteValue, {}),
    ("reward = 10 ^ 400", NonFiniteValue, {}),
    ("reward = log(x)", DomainError, {"x": 0.0}),
    ("reward = sqrt(x)", DomainError, {"x": -1.0}),
    ("reward = x ^ 0.5", DomainError, {"x": -4.0}),
    ("reward = clip(x, 1, -1)", ClipBoundsError, {}),
])
def test_runtime_errors(src, err, kw):
    with pytest.raises(err) as info:
        run(src, **kw)
    assert info.value.span is not None and info.value.span.line == 1


def test_negative_base_integer_power_is_fine():
    assert run("reward = x ^ 3", x=-2.0) == -8.0


def test_error_context_is_appended():
    with pytest.raises(DomainError) as info:
        run("reward = log(x)", x=-1.0)
    err = info.value
    noted = err.with_context("episode 2, step 7")
    assert noted.message.endswith("(episode 2, step 7)")
    assert isinstance(noted, DomainError) and noted.span == err.span


class Traj:
    env_name = "pointmass"

    def __init__(self, xs):
        self.xs = xs

    def contexts(self):
        return [{"x": x, "vx": 0.0, "prev_x": 0.0, "prev_vx": 0.0, "a0": 0.0, "t": float(i), "dt": 0.05,
                 "reward": 1.0} for i, x in enumerate(self.xs)]


def test_eval_metrics_against_hand_computed_values():
    prog = parse_eval("metric fx = final(x)\nmetric mx = mean(x)\nmetric sx = std(x)\n"
                      "metric lo = min(x)\nmetric hi = max(x)\nmetric n = sum(1)")
    episodes = [[1.0, 2.0, 3.0], [4.0, 6.0]]
    report = eval_metrics(prog, [Traj(e) for e in episodes], "ck")
    assert report.metrics["fx"].values == (3.0, 6.0)
    assert report.metrics["mx"].values == (2.0, 5.0)
    assert report.metrics["sx"].values == pytest.approx((statistics.pstdev([1, 2, 3]), 1.0))
    assert report.metrics["lo"].values == (1.0, 4.0)
    assert report.metrics["n"].values == (3.0, 2.0)
    assert report.metrics["n"].mean == 2.5 and report.metrics["n"].std == 0.5
    assert report.order == ("fx", "mx", "sx", "lo", "hi", "n")
    assert report.episodes == 2 and report.checkpoint_id == "ck"
    assert PerformanceReport.from_json(report.to_json()) == report


def test_eval_metrics_errors():
    with pytest.raises(EmptyTrajectoriesError):
        eval_metrics(parse_eval("metric m = mean(x)"), [])
    with pytest.raises(NonFiniteValue):
        eval_metrics(parse_eval("metric m = sum(x)"), [Traj([1e308, 1e308])])
    with pytest.raises(DomainError):
        eval_metrics(parse_eval("metric m = mean(log(x))"), [Traj([1.0, -1.0])])


# -- properties ---------------------------------------------------------------


@settings(max_examples=150)
@given(reward_programs(namespace(CP)))
def test_reward_round_trip(prog):
    assert parse_reward(print_program(prog)) == prog


@settings(max_examples=100)
@given(eval_programs(namespace(CP, for_metrics=True)))
def test_eval_round_trip(prog):
    assert parse_eval(print_program(prog)) == prog


values = st.floats(min_value=-50, max_value=50, allow_nan=False)


@settings(max_examples=150)
@given(reward_programs(namespace(CP)), st.lists(values, min_size=11, max_size=11))
def test_validated_programs_never_raise_name_or_type_errors(prog, vals):
    validate(prog, CP)
    try:
        v = eval_reward(prog, dict(zip(namespace(CP), vals)))
    except (UnknownIdentifier, DslTypeError):
        pytest.fail("validated program raised a static error at run time")
    except DslError:
        return
    assert math.isfinite(v)


def _py(expr, env):
    """Independent oracle: evaluate through Python's own operators."""
    from skillforge.dsl.nodes import BinOp, BoolOp, Compare, Const, Name, Neg, Not
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Name):
        return env[expr.name]
    if isinstance(expr, Neg):
        return -_py(expr.operand, env)
    if isinstance(expr, Not):
        return not _py(expr.operand, env)
    if isinstance(expr, BinOp):
        a, b = _py(expr.left, env), _py(expr.right, env)
        return {"+": a + b, "-": a - b, "*": a * b}.get(expr.op) if expr.op in "+-*" else (
            a / b if expr.op == "/" else a ** b)
    if isinstance(expr, Compare):
        a, b = _py(expr.left, env), _py(expr.right, env)
        return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b, "==": a == b}[expr.op]
    if isinstance(expr, BoolOp):
        a = _py(expr.left, env)
        return (a and _py(expr.right, env)) if expr.op == "and" else (a or _py(expr.right, env))
    assert isinstance(expr, Call)
    args = expr.args
    if expr.func == "if":
        return _py(args[1], env) if _py(args[0], env) else _py(args[2], env)
    vals = [_py(a, env) for a in args]
    if expr.func == "clip":
        return max(vals[1], min(vals[0], vals[2]))
    f = {"abs": abs, "exp": math.exp, "log": math.log, "sqrt": math.sqrt, "tanh": math.tanh,
         "sin": math.sin, "cos": math.cos, "min": min, "max": max}[expr.func]
    return f(*vals)


@settings(max_examples=150)
@given(reward_programs(namespace(CP)), st.lists(values, min_size=11, max_size=11))
def test_evaluator_agrees_with_python_oracle(prog, vals):
    env = dict(zip(namespace(CP), vals))
    try:
        got = eval_reward(prog, env)
    except DslError:
        return
    for b in prog.bindings:
        env[b.name] = _py(b.expr, env)
    assert got == _py(prog.reward, env)
