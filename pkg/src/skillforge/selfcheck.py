"""Fast invariant suite behind ``skillforge check``.

Functions under test are looked up on their modules at call time, so a
test can patch one with a deliberately broken version and watch the
corresponding check fail.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics, sac
from .dsl import namespace, parse_eval, parse_reward, print_program, validate
from .dsl.generate import random_eval_program, random_reward_program
from .envs import SCHEMAS, make_env, schema

GRAD_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def gradient_errors(env_name: str, hidden: tuple[int, ...] = (64, 64), batch: int = 8, seed: int = 0) -> dict[str, float]:
    """Max relative gradient error of each SAC loss on one random batch."""
    rng = np.random.default_rng(seed)
    sch = schema(env_name)
    agent = sac.SacAgent.create(sch, sac.SacConfig(hidden=hidden), rng)
    k, n = sch.action_dim, sch.obs_dim
    obs = rng.standard_normal((batch, n))
    act = rng.uniform(-1, 1, (batch, k))
    target = rng.standard_normal(batch)
    eps = rng.standard_normal((batch, k))
    logp = rng.standard_normal(batch)
    spec_q, spec_pi = agent.critic1.spec, agent.policy.spec

    def critic(x):
        loss, g = sac.critic_loss_and_grad(numerics.ParamStore(spec_q, x), obs, act, target)
        return loss, g.flat

    def policy(x):
        loss, g, _ = sac.policy_loss_and_grad(numerics.ParamStore(spec_pi, x), agent.critic1, agent.critic2,
                                              obs, eps, 0.3, agent.scale)
        return loss, g.flat

    def temperature(x):
        loss, g = sac.temperature_loss_and_grad(float(x[0]), logp, sac.SacConfig().entropy_target(k))
        return loss, np.array([g])

    return {
        "critic": numerics.gradient_check(critic, agent.critic1.flat),
        "policy": numerics.gradient_check(policy, agent.policy.flat),
        "temperature": numerics.gradient_check(temperature, np.array([0.2])),
    }


def _gradients(hidden):
    def check() -> tuple[bool, str]:
        worst = []
        for env_name in sorted(SCHEMAS):
            for loss, err in gradient_errors(env_name, hidden).items():
                if not err <= GRAD_TOLERANCE:
                    worst.append(f"{env_name}/{loss} relative error {err:.3g}")
        return (not worst), "; ".join(worst) or f"all losses within {GRAD_TOLERANCE:g}"
    return check


def _parser_roundtrip(count: int = 300) -> tuple[bool, str]:
    rng = random.Random(7)
    for env_name, sch in sorted(SCHEMAS.items()):
        for _ in range(count // len(SCHEMAS)):
            p = random_reward_program(rng, namespace(sch))
            validate(p, sch)
            if parse_reward(print_program(p)) != p:
                return False, f"reward program did not round-trip:\n{print_program(p)}"
            e = random_eval_program(rng, namespace(sch, for_metrics=True))
            if parse_eval(print_program(e)) != e:
                return False, f"eval program did not round-trip:\n{print_program(e)}"
    return True, f"{count} programs of each kind"


def _env_determinism() -> tuple[bool, str]:
    for name in sorted(SCHEMAS):
        runs = []
        for _ in range(2):
            env = make_env(name)
            obs = [env.reset(11)]
            rng = np.random.default_rng(3)
            for _ in range(50):
                o, term, trunc = env.step(rng.uniform(-1, 1, env.schema.action_dim))
                obs.append(o)
                if term or trunc:
                    break
            runs.append(np.array(obs))
        if runs[0].shape != runs[1].shape or not np.array_equal(runs[0], runs[1]):
            return False, f"{name} is not deterministic for a fixed seed"
    return True, "identical trajectories for identical seeds"


def _physics() -> tuple[bool, str]:
    pm = make_env("pointmass")
    pm.reset(0)
    pm.set_state([0.0, 1.0])
    v = [pm.step([0.0])[0][1] for _ in range(20)]
    if not all(b < a for a, b in zip([1.0] + v, v)):
        return False, "pointmass velocity does not decay under zero force"
    cp = make_env("cartpole")
    cp.reset(0)
    cp.set_state([0.0, 0.0, 0.05, 0.0])
    if not cp.step([0.0])[0][3] > 0:
        return False, "cartpole tilt does not grow away from upright"
    hop = make_env("hopper1d")
    hop.reset(0)
    for _ in range(300):
        z = hop.step([-1.0])[0][0]
        if z < 0:
            return False, "hopper1d went below the ground"
    return True, "friction decay, unstable upright, ground clamp"


def _serialization() -> tuple[bool, str]:
    rng = np.random.default_rng(5)
    spec = numerics.MlpSpec(3, (4, 5), 2)
    params = numerics.init_params(spec, rng)
    back = numerics.params_from_json(numerics.params_to_json(params))
    if not np.array_equal(back.flat, params.flat):
        return False, "parameter serialization is lossy"
    return True, "bit-exact parameter round trip"


def checks(full_gradients: bool = False) -> list[tuple[str, Callable[[], tuple[bool, str]]]]:
    hidden = (64, 64) if full_gradients else (16, 16)
    return [
        ("gradients", _gradients(hidden)),
        ("parser-roundtrip", _parser_roundtrip),
        ("env-determinism", _env_determinism),
        ("env-physics", _physics),
        ("serialization", _serialization),
    ]


def run_checks(full_gradients: bool = False) -> list[CheckResult]:
    results = []
    for name, fn in checks(full_gradients):
        start = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, ok, detail, time.perf_counter() - start))
    return results
