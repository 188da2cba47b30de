"""Reference policies used to put trained results in context.

``random_baseline`` measures a uniform-random policy; ``constant_action_oracle``
tries every constant action on a coarse grid and keeps the best headline value,
which for the point mass is the analytic upper bound on distance travelled.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .curated import CuratedTask
from .dsl import PerformanceReport, eval_metrics, parse_eval, parse_reward
from .envs import rollout, schema

ZERO_REWARD = parse_reward("reward = 0")


def random_baseline(env_name: str, eval_source: str, episodes: int = 10, base_seed: int = 0,
                    seed: int = 0) -> PerformanceReport:
    sch = schema(env_name)
    lo = np.array([b[0] for b in sch.action_bounds])
    hi = np.array([b[1] for b in sch.action_bounds])
    rng = np.random.default_rng(seed)
    trajs = rollout(env_name, lambda obs: rng.uniform(lo, hi), ZERO_REWARD, episodes, base_seed)
    return eval_metrics(parse_eval(eval_source), trajs, "random")


def constant_report(env_name: str, eval_source: str, action, episodes: int = 10,
                    base_seed: int = 0) -> PerformanceReport:
    a = np.asarray(action, dtype=np.float64)
    trajs = rollout(env_name, lambda obs: a, ZERO_REWARD, episodes, base_seed)
    return eval_metrics(parse_eval(eval_source), trajs, f"constant{a.tolist()}")


@dataclass(frozen=True)
class OracleResult:
    metric: str
    value: float
    action: tuple[float, ...]


def constant_action_oracle(task: CuratedTask, grid: int = 5, episodes: int = 10, base_seed: int = 0) -> OracleResult:
    """Best headline metric over constant actions on a ``grid``-point lattice."""
    sch = schema(task.env)
    axes = [np.linspace(lo, hi, grid) for lo, hi in sch.action_bounds]
    best: OracleResult | None = None
    for combo in itertools.product(*axes):
        value = constant_report(task.env, task.eval, combo, episodes, base_seed).metrics[task.metric].mean
        better = best is None or (value > best.value if task.op == ">=" else value < best.value)
        if better:
            best = OracleResult(task.metric, value, tuple(float(c) for c in combo))
    return best


def improvement_factor(task: CuratedTask, trained: float, baseline: float) -> float:
    """How many times better ``trained`` is than ``baseline`` on the headline metric.

    Magnitude metrics whose target is a small value (the threshold is a
    non-negative upper bound) compare as ``baseline / trained``; directional
    metrics compare the signed progress against the baseline's magnitude.
    """
    tiny = 1e-9
    if task.op == "<=" and task.threshold >= 0:
        return baseline / max(trained, tiny)
    sign = 1.0 if task.op == ">=" else -1.0
    return sign * trained / max(abs(baseline), tiny)
