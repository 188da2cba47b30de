"""Episode rollouts, trajectory records and their CSV persistence."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..dsl import DslError, RewardProgram, eval_reward
from .dynamics import Env, make_env, schema
from .schema import EnvSchema

Policy = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Step:
    prev_obs: tuple[float, ...]
    action: tuple[float, ...]
    next_obs: tuple[float, ...]
    reward: float
    terminated: bool
    truncated: bool


@dataclass
class Trajectory:
    env_name: str
    seed: int
    steps: list[Step] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def contexts(self) -> list[dict[str, float]]:
        sch = schema(self.env_name)
        return [transition_context(sch, s.prev_obs, s.action, s.next_obs, t, reward=s.reward)
                for t, s in enumerate(self.steps)]

    def column(self, field_name: str) -> np.ndarray:
        i = schema(self.env_name).field_names.index(field_name)
        return np.array([s.next_obs[i] for s in self.steps])

    @property
    def total_reward(self) -> float:
        return float(sum(s.reward for s in self.steps))


def transition_context(
    sch: EnvSchema, prev_obs, action, next_obs, t: int, reward: float | None = None
) -> dict[str, float]:
    """Name -> value mapping the reward and metric languages evaluate against."""
    ctx: dict[str, float] = {}
    for name, v in zip(sch.field_names, next_obs):
        ctx[name] = float(v)
    for name, v in zip(sch.field_names, prev_obs):
        ctx["prev_" + name] = float(v)
    for i, v in enumerate(action):
        ctx[f"a{i}"] = float(v)
    ctx["t"] = float(t)
    ctx["dt"] = float(sch.dt)
    if reward is not None:
        ctx["reward"] = float(reward)
    return ctx


def run_episode(env: Env, policy: Policy, program: RewardProgram, seed: int, episode: int = 0) -> Trajectory:
    traj = Trajectory(env.name, seed)
    obs = env.reset(seed)
    t = 0
    while True:
        action = env.clamp(policy(obs))
        nxt, terminated, truncated = env.step(action)
        try:
            r = eval_reward(program, transition_context(env.schema, obs, action, nxt, t))
        except DslError as err:
            annotated = err.with_context(f"episode {episode}, step {t}")
            annotated.episode, annotated.step = episode, t
            raise annotated from err
        traj.steps.append(Step(tuple(obs.tolist()), tuple(action.tolist()), tuple(nxt.tolist()),
                               r, terminated, truncated))
        if terminated or truncated:
            return traj
        obs = nxt
        t += 1


def rollout(
    env: Env | str,
    policy: Policy,
    reward_program: RewardProgram,
    episodes: int,
    base_seed: int,
) -> list[Trajectory]:
    """Run ``episodes`` episodes; episode ``e`` is reset with ``base_seed + e``.

    DSL errors raised by the reward program propagate with the episode and
    step index appended to their message.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    if isinstance(env, str):
        env = make_env(env)
    out = []
    for e in range(episodes):
        out.append(run_episode(env, policy, reward_program, base_seed + e, episode=e))
    return out


def trajectory_csv(traj: Trajectory) -> str:
    sch = schema(traj.env_name)
    names = sch.field_names
    header = (["t"] + [f"prev_{n}" for n in names] + [f"a{i}" for i in range(sch.action_dim)]
              + list(names) + ["reward", "terminated", "truncated"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for t, s in enumerate(traj.steps):
        w.writerow([t, *map(repr, s.prev_obs), *map(repr, s.action), *map(repr, s.next_obs),
                    repr(s.reward), int(s.terminated), int(s.truncated)])
    return buf.getvalue()


def write_trajectory(path: Path, traj: Trajectory, program_hashes: dict[str, str] | None = None) -> None:
    """Write ``path`` (CSV rows) and a sibling ``.json`` header."""
    path = Path(path)
    path.write_text(trajectory_csv(traj))
    header = {"env": traj.env_name, "seed": traj.seed, "steps": len(traj),
              "programs": dict(program_hashes or {})}
    path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def read_trajectory(path: Path) -> Trajectory:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    sch = schema(header["env"])
    n, k = sch.obs_dim, sch.action_dim
    traj = Trajectory(header["env"], int(header["seed"]))
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    for row in rows[1:]:
        vals = row[1:]
        prev = tuple(float(v) for v in vals[:n])
        act = tuple(float(v) for v in vals[n:n + k])
        nxt = tuple(float(v) for v in vals[n + k:2 * n + k])
        reward = float(vals[2 * n + k])
        traj.steps.append(Step(prev, act, nxt, reward, vals[-2] == "1", vals[-1] == "1"))
    return traj
