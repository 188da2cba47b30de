"""Hand-written example programs and the desk-scale task catalogue.

The examples fill the EXAMPLE section of prompts. The catalogue backs the
scripted ``happy_path`` responder and the bundled benchmark suite.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass

EXAMPLES = {
    "pointmass": {
        "reward": "# reward progress along the track, lightly penalize force\nlet progress = x - prev_x\nreward = progress / dt - 0.01 * a0 ^ 2",
        "eval": "metric final_x = final(x)\nmetric mean_speed = mean(abs(vx))",
    },
    "cartpole": {
        "reward": "# stay upright and near the center\nreward = cos(theta) - 0.01 * x ^ 2",
        "eval": "metric steps_alive = sum(1)\nmetric max_tilt = max(abs(theta))",
    },
    "hopper1d": {
        "reward": "# height above the ground with a small effort penalty\nreward = z - 0.001 * a0 ^ 2",
        "eval": "metric max_height = max(z)\nmetric mean_height = mean(z)",
    },
}


def example_text(env_name: str, kind: str) -> str:
    return EXAMPLES[env_name][kind]


_OPS = {">=": operator.ge, "<=": operator.le}


@dataclass(frozen=True)
class CuratedTask:
    key: str
    env: str
    task: str
    keywords: tuple[str, ...]
    reward: str
    eval: str
    metric: str
    op: str
    threshold: float
    advice: str

    def judge(self, value: float) -> bool:
        return _OPS[self.op](value, self.threshold)


CATALOGUE = (
    CuratedTask(
        "stand_still", "pointmass", "Stand still: keep the mass at the origin without moving.",
        ("still", "stand", "stay", "hold"),
        "# quadratic penalty on distance from the origin and on speed\nreward = -(x ^ 2) - 0.1 * vx ^ 2",
        "metric mean_abs_x = mean(abs(x))\nmetric mean_abs_vx = mean(abs(vx))",
        "mean_abs_x", "<=", 0.2,
        "penalize distance from the origin more strongly and damp the velocity",
    ),
    CuratedTask(
        "move_forward", "pointmass", "Move forward: travel as far as possible in the positive x direction.",
        ("forward",),
        "reward = vx",
        "metric final_x = final(x)\nmetric mean_vx = mean(vx)",
        "final_x", ">=", 5.0,
        "reward forward velocity directly and avoid penalties that discourage pushing",
    ),
    CuratedTask(
        "move_backward", "pointmass", "Move backward: travel as far as possible in the negative x direction.",
        ("backward", "reverse"),
        "reward = -vx",
        "metric final_x = final(x)\nmetric mean_vx = mean(vx)",
        "final_x", "<=", -5.0,
        "reward negative velocity directly and avoid penalties that discourage pushing",
    ),
    CuratedTask(
        "balance", "cartpole", "Balance the pole upright for the whole episode.",
        ("balance", "upright"),
        "reward = 1 - theta ^ 2 - 0.01 * x ^ 2",
        "metric steps_alive = sum(1)\nmetric max_tilt = max(abs(theta))",
        "steps_alive", ">=", 450.0,
        "reward every surviving step and penalize the pole angle",
    ),
    CuratedTask(
        "jump_high", "hopper1d", "Jump as high as possible from a stationary position.",
        ("jump", "hop", "high"),
        "reward = z",
        "metric max_height = max(z)\nmetric mean_height = mean(z)",
        "max_height", ">=", 0.8,
        "reward height above the ground so the agent pushes with full thrust",
    ),
)

DESK_SUITE = ("stand_still", "move_forward", "move_backward")


def find_task(task_text: str, env_name: str) -> CuratedTask | None:
    text = task_text.lower()
    for c in CATALOGUE:
        if c.env == env_name and any(k in text for k in c.keywords):
            return c
    return None


def by_key(key: str) -> CuratedTask:
    for c in CATALOGUE:
        if c.key == key:
            return c
    raise KeyError(key)
