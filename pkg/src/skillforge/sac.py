"""Soft Actor-Critic on top of :mod:`skillforge.numerics`.

Twin Q critics with Polyak-averaged targets, a tanh-squashed Gaussian policy
and automatic entropy-temperature tuning (temperature kept in log space).
The loss functions are exposed separately so their gradients can be checked
against finite differences.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .dsl import DslError, RewardProgram, eval_reward, program_digest
from .envs import EnvSchema, make_env, schema, transition_context
from .numerics import (
    AdamState,
    MlpSpec,
    NonFiniteError,
    ParamStore,
    adam_step,
    check_finite,
    decode_array,
    encode_array,
    init_params,
    mlp_backward,
    mlp_forward,
    params_from_json,
    params_to_json,
)

log = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
SQUASH_EPS = 1e-6
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
CHECKPOINT_VERSION = 1

DEFAULT_TOTAL_STEPS = {"pointmass": 30_000, "cartpole": 60_000, "hopper1d": 60_000}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SacConfig:
    total_steps: int = 30_000
    warmup_steps: int = 1_000
    replay_capacity: int = 50_000
    batch_size: int = 128
    gamma: float = 0.99
    tau: float = 0.005
    policy_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    target_entropy: float | None = None  # None -> -(action dimension)
    updates_per_step: int = 1
    eval_interval: int = 2_000
    eval_episodes: int = 5
    hidden: tuple[int, ...] = (64, 64)
    init_alpha: float = 1.0
    seed: int = 0
    fresh_start: bool = True  # each outer iteration retrains from scratch

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        problems = []
        if not 0.0 < self.gamma < 1.0:
            problems.append("gamma must be in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            problems.append("tau must be in (0, 1]")
        if self.batch_size < 1 or self.batch_size > self.replay_capacity:
            problems.append("batch_size must be between 1 and replay_capacity")
        if self.warmup_steps < 0 or self.warmup_steps > self.total_steps:
            problems.append("warmup_steps must be between 0 and total_steps")
        if self.total_steps < 1 or self.eval_interval < 1 or self.eval_episodes < 1:
            problems.append("total_steps, eval_interval and eval_episodes must be positive")
        if self.updates_per_step < 0:
            problems.append("updates_per_step must be non-negative")
        if self.init_alpha <= 0:
            problems.append("init_alpha must be positive")
        if problems:
            raise ConfigError("; ".join(problems))

    @classmethod
    def for_env(cls, env_name: str, **overrides) -> "SacConfig":
        schema(env_name)
        base = {"total_steps": DEFAULT_TOTAL_STEPS[env_name]}
        base.update(overrides)
        return cls.from_dict(base)

    @classmethod
    def from_dict(cls, d: dict) -> "SacConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown SAC config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def entropy_target(self, action_dim: int) -> float:
        return -float(action_dim) if self.target_entropy is None else float(self.target_entropy)


class ReplayBuffer:
    """Fixed-capacity ring of transitions."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.terminated = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def add(self, obs, act, rew: float, next_obs, terminated: bool) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.terminated[i] = float(terminated)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int) -> "Batch":
        if self.size < batch:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch}")
        idx = rng.integers(0, self.size, size=batch)
        return Batch(self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx], self.terminated[idx])


@dataclass
class Batch:
    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    terminated: np.ndarray


@dataclass
class ActionScale:
    center: np.ndarray
    half_range: np.ndarray

    @classmethod
    def from_schema(cls, sch: EnvSchema) -> "ActionScale":
        lo = np.array([b[0] for b in sch.action_bounds])
        hi = np.array([b[1] for b in sch.action_bounds])
        return cls((hi + lo) / 2.0, (hi - lo) / 2.0)


# -- policy ------------------------------------------------------------------


@dataclass
class PolicySample:
    action: np.ndarray
    logp: np.ndarray
    mean: np.ndarray
    log_std: np.ndarray
    std: np.ndarray
    squashed: np.ndarray  # tanh(u)
    eps: np.ndarray
    clip_mask: np.ndarray  # 1 where the raw log-std was inside the clamp range
    cache: object


def policy_sample(
    params: ParamStore, obs: np.ndarray, eps: np.ndarray, scale: ActionScale
) -> PolicySample:
    """Reparameterized sample ``a = center + half_range * tanh(mean + std * eps)``."""
    out, cache = mlp_forward(params.spec, params, obs)
    k = out.shape[1] // 2
    mean, raw = out[:, :k], out[:, k:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    clip_mask = ((raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX)).astype(np.float64)
    std = np.exp(log_std)
    u = mean + std * eps
    t = np.tanh(u)
    action = scale.center + scale.half_range * t
    logp = np.sum(
        -0.5 * eps * eps - log_std - HALF_LOG_2PI - np.log(1.0 - t * t + SQUASH_EPS) - np.log(scale.half_range),
        axis=1,
    )
    return PolicySample(action, logp, mean, log_std, std, t, eps, clip_mask, cache)


def policy_log_prob(params: ParamStore, obs: np.ndarray, action: np.ndarray, scale: ActionScale) -> np.ndarray:
    """log pi(action | obs) for actions strictly inside the bounds."""
    out, _ = mlp_forward(params.spec, params, obs)
    k = out.shape[1] // 2
    mean, log_std = out[:, :k], np.clip(out[:, k:], LOG_STD_MIN, LOG_STD_MAX)
    t = (np.asarray(action) - scale.center) / scale.half_range
    u = np.arctanh(t)
    eps = (u - mean) / np.exp(log_std)
    return np.sum(
        -0.5 * eps * eps - log_std - HALF_LOG_2PI - np.log(1.0 - t * t + SQUASH_EPS) - np.log(scale.half_range),
        axis=1,
    )


def deterministic_action(params: ParamStore, obs: np.ndarray, scale: ActionScale) -> np.ndarray:
    out, _ = mlp_forward(params.spec, params, obs)
    k = out.shape[1] // 2
    return scale.center + scale.half_range * np.tanh(out[:, :k])


# -- losses ------------------------------------------------------------------


def q_values(critic: ParamStore, obs: np.ndarray, act: np.ndarray):
    out, cache = mlp_forward(critic.spec, critic, np.concatenate([obs, act], axis=1))
    return out[:, 0], cache


def critic_loss_and_grad(
    critic: ParamStore, obs: np.ndarray, act: np.ndarray, target: np.ndarray
) -> tuple[float, ParamStore]:
    """Mean squared Bellman error ``mean((Q(s, a) - y)^2)`` and its gradient."""
    q, cache = q_values(critic, obs, act)
    diff = q - target
    loss = float(np.mean(diff * diff))
    grads, _ = mlp_backward(critic.spec, critic, cache, (2.0 / len(diff) * diff)[:, None])
    return loss, grads


def policy_loss_and_grad(
    policy: ParamStore,
    critic1: ParamStore,
    critic2: ParamStore,
    obs: np.ndarray,
    eps: np.ndarray,
    alpha: float,
    scale: ActionScale,
) -> tuple[float, ParamStore, np.ndarray]:
    """``mean(alpha * log pi(a~|s) - min(Q1, Q2)(s, a~))`` with fixed noise ``eps``.

    Returns the loss, the policy gradient, and the (detached) log-probs.
    """
    s = policy_sample(policy, obs, eps, scale)
    n, k = s.action.shape
    q1, c1 = q_values(critic1, obs, s.action)
    q2, c2 = q_values(critic2, obs, s.action)
    use1 = q1 <= q2
    qmin = np.where(use1, q1, q2)
    loss = float(np.mean(alpha * s.logp - qmin))

    # dL/dq_min = -1/n, routed to whichever critic attained the minimum
    g1 = np.where(use1, -1.0 / n, 0.0)[:, None]
    g2 = np.where(use1, 0.0, -1.0 / n)[:, None]
    _, gin1 = mlp_backward(critic1.spec, critic1, c1, g1)
    _, gin2 = mlp_backward(critic2.spec, critic2, c2, g2)
    d_action = gin1[:, -k:] + gin2[:, -k:]

    t = s.squashed
    one_minus_t2 = 1.0 - t * t
    d_logp = alpha / n
    # u -> tanh -> action, and u -> the squash correction inside log pi
    g_u = d_action * scale.half_range * one_minus_t2 + d_logp * 2.0 * t * one_minus_t2 / (one_minus_t2 + SQUASH_EPS)
    g_mean = g_u
    g_log_std = (g_u * s.std * s.eps - d_logp) * s.clip_mask
    grads, _ = mlp_backward(policy.spec, policy, s.cache, np.concatenate([g_mean, g_log_std], axis=1))
    return loss, grads, s.logp


def temperature_loss_and_grad(log_alpha: float, logp: np.ndarray, target_entropy: float) -> tuple[float, float]:
    """``-mean(log_alpha * (log pi + target_entropy))`` with log pi detached."""
    m = float(np.mean(logp + target_entropy))
    return -log_alpha * m, -m


def critic_target(
    policy: ParamStore,
    target1: ParamStore,
    target2: ParamStore,
    batch: Batch,
    eps: np.ndarray,
    alpha: float,
    gamma: float,
    scale: ActionScale,
) -> np.ndarray:
    """``y = r + gamma * (1 - terminated) * (min Q_targ(s', a') - alpha * log pi(a'|s'))``."""
    s = policy_sample(policy, batch.next_obs, eps, scale)
    q1, _ = q_values(target1, batch.next_obs, s.action)
    q2, _ = q_values(target2, batch.next_obs, s.action)
    soft_v = np.minimum(q1, q2) - alpha * s.logp
    return batch.rew + gamma * (1.0 - batch.terminated) * soft_v


def polyak(target: ParamStore, online: ParamStore, tau: float) -> ParamStore:
    return ParamStore(target.spec, tau * online.flat + (1.0 - tau) * target.flat)


# -- agent -------------------------------------------------------------------


@dataclass
class SacAgent:
    policy: ParamStore
    critic1: ParamStore
    critic2: ParamStore
    target1: ParamStore
    target2: ParamStore
    log_alpha: float
    scale: ActionScale
    policy_opt: AdamState
    critic1_opt: AdamState
    critic2_opt: AdamState
    alpha_opt: AdamState

    @classmethod
    def create(cls, sch: EnvSchema, config: SacConfig, rng: np.random.Generator) -> "SacAgent":
        pspec = MlpSpec(sch.obs_dim, config.hidden, 2 * sch.action_dim)
        qspec = MlpSpec(sch.obs_dim + sch.action_dim, config.hidden, 1)
        policy = init_params(pspec, rng)
        c1 = init_params(qspec, rng)
        c2 = init_params(qspec, rng)
        log_alpha = math.log(config.init_alpha)
        return cls(
            policy, c1, c2, c1.copy(), c2.copy(), log_alpha, ActionScale.from_schema(sch),
            AdamState.for_params(policy, config.policy_lr),
            AdamState.for_params(c1, config.critic_lr),
            AdamState.for_params(c2, config.critic_lr),
            AdamState.for_params(np.zeros(1), config.alpha_lr),
        )

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    @property
    def action_dim(self) -> int:
        return self.policy.spec.output_dim // 2

    def sample_action(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal((1, self.action_dim))
        return policy_sample(self.policy, obs[None, :], eps, self.scale).action[0]


@dataclass
class UpdateLosses:
    critic1: float
    critic2: float
    policy: float
    temperature: float
    alpha: float


def sac_update(agent: SacAgent, batch: Batch, config: SacConfig, rng: np.random.Generator) -> UpdateLosses:
    """One gradient step on both critics, the policy and the temperature, then Polyak.

    Mutates ``agent`` in place. Raises :class:`NonFiniteError` naming the
    offending tensor if anything becomes non-finite.
    """
    n, k = batch.act.shape
    alpha = agent.alpha
    eps_next = rng.standard_normal((n, k))
    y = critic_target(agent.policy, agent.target1, agent.target2, batch, eps_next, alpha, config.gamma, agent.scale)
    check_finite("critic target", y)

    l1, g1 = critic_loss_and_grad(agent.critic1, batch.obs, batch.act, y)
    l2, g2 = critic_loss_and_grad(agent.critic2, batch.obs, batch.act, y)
    check_finite("critic1 loss", l1)
    check_finite("critic2 loss", l2)
    check_finite("critic1 gradient", g1.flat)
    check_finite("critic2 gradient", g2.flat)
    agent.critic1, agent.critic1_opt = adam_step(agent.critic1_opt, agent.critic1, g1)
    agent.critic2, agent.critic2_opt = adam_step(agent.critic2_opt, agent.critic2, g2)

    eps = rng.standard_normal((n, k))
    lp, gp, logp = policy_loss_and_grad(agent.policy, agent.critic1, agent.critic2, batch.obs, eps, alpha, agent.scale)
    check_finite("policy loss", lp)
    check_finite("policy gradient", gp.flat)
    agent.policy, agent.policy_opt = adam_step(agent.policy_opt, agent.policy, gp)

    lt, gt = temperature_loss_and_grad(agent.log_alpha, logp, config.entropy_target(k))
    check_finite("temperature gradient", gt)
    new_la, agent.alpha_opt = adam_step(agent.alpha_opt, np.array([agent.log_alpha]), np.array([gt]))
    agent.log_alpha = float(new_la[0])

    agent.target1 = polyak(agent.target1, agent.critic1, config.tau)
    agent.target2 = polyak(agent.target2, agent.critic2, config.tau)
    return UpdateLosses(l1, l2, lp, lt, alpha)


# -- checkpoints ---------------------------------------------------------------


@dataclass
class PolicyCheckpoint:
    policy: ParamStore
    critic1: ParamStore
    critic2: ParamStore
    target1: ParamStore
    target2: ParamStore
    log_alpha: float
    train_steps: int
    env_name: str
    reward_hash: str

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    @property
    def identifier(self) -> str:
        return f"{self.env_name}-{self.reward_hash[:12]}-{self.train_steps}"

    @classmethod
    def from_agent(cls, agent: SacAgent, train_steps: int, env_name: str, reward_hash: str) -> "PolicyCheckpoint":
        return cls(agent.policy.copy(), agent.critic1.copy(), agent.critic2.copy(), agent.target1.copy(),
                   agent.target2.copy(), agent.log_alpha, train_steps, env_name, reward_hash)

    def to_json(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "env_name": self.env_name,
            "reward_hash": self.reward_hash,
            "train_steps": self.train_steps,
            "log_alpha": encode_array(np.array([self.log_alpha])),
            "policy": params_to_json(self.policy),
            "critic1": params_to_json(self.critic1),
            "critic2": params_to_json(self.critic2),
            "target1": params_to_json(self.target1),
            "target2": params_to_json(self.target2),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, doc: dict) -> "PolicyCheckpoint":
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
        return cls(
            params_from_json(doc["policy"]),
            params_from_json(doc["critic1"]),
            params_from_json(doc["critic2"]),
            params_from_json(doc["target1"]),
            params_from_json(doc["target2"]),
            float(decode_array(doc["log_alpha"], 1)[0]),
            int(doc["train_steps"]),
            doc["env_name"],
            doc["reward_hash"],
        )


def act(
    checkpoint: PolicyCheckpoint,
    observation,
    deterministic: bool = True,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Action for one observation.

    Deterministic mode returns ``tanh(mean)`` scaled to the action bounds;
    stochastic mode draws from the caller-supplied ``rng``.
    """
    sch = schema(checkpoint.env_name)
    obs = np.asarray(observation, dtype=np.float64).reshape(1, -1)
    if obs.shape[1] != sch.obs_dim:
        raise ValueError(f"{sch.name} observations have {sch.obs_dim} fields, got {obs.shape[1]}")
    scale = ActionScale.from_schema(sch)
    if deterministic:
        return deterministic_action(checkpoint.policy, obs, scale)[0]
    if rng is None:
        raise ValueError("stochastic actions need an explicit rng")
    eps = rng.standard_normal((1, sch.action_dim))
    return policy_sample(checkpoint.policy, obs, eps, scale).action[0]


def policy_fn(checkpoint: PolicyCheckpoint) -> Callable[[np.ndarray], np.ndarray]:
    return lambda obs: act(checkpoint, obs, deterministic=True)


# -- training ------------------------------------------------------------------

LOG_COLUMNS = ("env_step", "mean_eval_return", "critic1_loss", "critic2_loss", "policy_loss", "alpha", "updates")


@dataclass
class LogRecord:
    env_step: int
    mean_eval_return: float
    critic1_loss: float
    critic2_loss: float
    policy_loss: float
    alpha: float
    updates: int


@dataclass
class TrainingLog:
    records: list[LogRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            w.writerow([r.env_step, repr(r.mean_eval_return), repr(r.critic1_loss), repr(r.critic2_loss),
                        repr(r.policy_loss), repr(r.alpha), r.updates])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainingLog":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != LOG_COLUMNS:
            raise ValueError("not a training log: unexpected header")
        recs = [LogRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]), float(r[5]), int(r[6]))
                for r in rows[1:]]
        return cls(recs)

    @property
    def final_return(self) -> float:
        return self.records[-1].mean_eval_return if self.records else float("nan")


class TrainingAborted(RuntimeError):
    pass


EVAL_SEED_BASE = 1_000_000


def evaluate_policy(agent: SacAgent, env_name: str, program: RewardProgram, episodes: int, base_seed: int) -> float:
    env = make_env(env_name)
    returns = []
    for e in range(episodes):
        obs = env.reset(base_seed + e)
        total, t, done = 0.0, 0, False
        while not done:
            a = deterministic_action(agent.policy, obs[None, :], agent.scale)[0]
            nxt, term, trunc = env.step(a)
            total += eval_reward(program, transition_context(env.schema, obs, a, nxt, t))
            obs, t, done = nxt, t + 1, term or trunc
        returns.append(total)
    return float(np.mean(returns))


def train(
    env_name: str,
    reward_program: RewardProgram,
    config: SacConfig,
    progress: Callable[[LogRecord], None] | None = None,
) -> tuple[PolicyCheckpoint, TrainingLog]:
    """Train a fresh SAC agent against ``reward_program``.

    Deterministic given ``config.seed``. DSL errors from the reward program
    abort training and propagate with the environment step appended.
    """
    if config.total_steps < config.warmup_steps:
        raise ConfigError("total_steps must be at least warmup_steps")
    env = make_env(env_name)
    sch = env.schema
    rng = np.random.default_rng(config.seed)
    agent = SacAgent.create(sch, config, rng)
    buffer = ReplayBuffer(min(config.replay_capacity, config.total_steps), sch.obs_dim, sch.action_dim)
    buffer_batch = min(config.batch_size, buffer.capacity)
    lo = np.array([b[0] for b in sch.action_bounds])
    hi = np.array([b[1] for b in sch.action_bounds])
    reward_hash = program_digest(reward_program)
    train_log = TrainingLog()
    acc = np.zeros(4)

    episode = 0
    obs = env.reset(int(rng.integers(2**31)))
    t = 0
    for step in range(1, config.total_steps + 1):
        if step <= config.warmup_steps:
            action = rng.uniform(lo, hi)
        else:
            action = env.clamp(agent.sample_action(obs, rng))
        nxt, terminated, truncated = env.step(action)
        try:
            r = eval_reward(reward_program, transition_context(sch, obs, action, nxt, t))
        except DslError as err:
            annotated = err.with_context(f"training step {step}, episode {episode}, step {t}")
            raise annotated from err
        buffer.add(obs, action, r, nxt, terminated)
        if terminated or truncated:
            episode += 1
            obs = env.reset(int(rng.integers(2**31)))
            t = 0
        else:
            obs, t = nxt, t + 1

        if step >= config.warmup_steps and buffer.size >= buffer_batch:
            for _ in range(config.updates_per_step):
                try:
                    losses = sac_update(agent, buffer.sample(rng, buffer_batch), config, rng)
                except NonFiniteError as err:
                    raise TrainingAborted(f"{err} at training step {step}") from err
                acc += (losses.critic1, losses.critic2, losses.policy, 1.0)

        if step % config.eval_interval == 0 or step == config.total_steps:
            ret = evaluate_policy(agent, env_name, reward_program, config.eval_episodes, EVAL_SEED_BASE)
            means = acc[:3] / acc[3] if acc[3] else np.zeros(3)
            rec = LogRecord(step, ret, float(means[0]), float(means[1]), float(means[2]), agent.alpha, int(acc[3]))
            if not all(math.isfinite(v) for v in (rec.mean_eval_return, rec.critic1_loss, rec.critic2_loss,
                                                   rec.policy_loss, rec.alpha)):
                raise TrainingAborted(f"non-finite training statistics at step {step}: {rec}")
            train_log.records.append(rec)
            log.debug("step %d return %.3f alpha %.4f", step, ret, agent.alpha)
            if progress is not None:
                progress(rec)
            acc[:] = 0.0

    return PolicyCheckpoint.from_agent(agent, config.total_steps, env_name, reward_hash), train_log


def with_overrides(config: SacConfig, **kw) -> SacConfig:
    return replace(config, **kw)
