"""Deterministic desk-scale control environments.

All three integrate with semi-implicit Euler: the velocity is updated first
and the position then advances with the new velocity.
"""

from __future__ import annotations

import math

import numpy as np

from .schema import EnvSchema, ObsField, UnknownEnvironment


class EpisodeFinished(RuntimeError):
    """Raised when stepping an environment whose episode already ended."""


POINTMASS = EnvSchema(
    name="pointmass",
    fields=(
        ObsField("x", "m", "position of the mass along the track; positive is forward", (-16.0, 16.0)),
        ObsField("vx", "m/s", "velocity of the mass; positive is forward", (-2.0, 2.0)),
    ),
    action_dim=1,
    action_bounds=((-1.0, 1.0),),
    dt=0.05,
    max_steps=200,
    dynamics=(
        "1 kg point mass on a frictional line. Force F = a0 newtons, linear friction "
        "0.5 N*s/m, so acceleration = F - 0.5*vx. Terminal speed is 2 m/s. No termination."
    ),
    reset_distribution="x uniform in [-0.1, 0.1] m, vx = 0.",
    action_descriptions=("force in newtons",),
)

CARTPOLE = EnvSchema(
    name="cartpole",
    fields=(
        ObsField("x", "m", "cart position; the episode ends if |x| > 2.4", (-2.4, 2.4)),
        ObsField("vx", "m/s", "cart velocity", (-3.0, 3.0)),
        ObsField("theta", "rad", "pole angle from upright; ends if |theta| > 0.7", (-0.7, 0.7)),
        ObsField("omega", "rad/s", "pole angular velocity", (-4.0, 4.0)),
    ),
    action_dim=1,
    action_bounds=((-1.0, 1.0),),
    dt=0.02,
    max_steps=500,
    dynamics=(
        "Classic cart-pole: cart mass 1.0 kg, pole mass 0.1 kg, pole half-length 0.5 m, "
        "gravity 9.8 m/s^2, horizontal force 10*a0 N on the cart. The episode terminates "
        "when |theta| > 0.7 rad or |x| > 2.4 m."
    ),
    reset_distribution="theta uniform in [-0.05, 0.05] rad; x = vx = omega = 0.",
    action_descriptions=("scaled cart force; force = 10*a0 newtons",),
)

HOPPER1D = EnvSchema(
    name="hopper1d",
    fields=(
        ObsField("z", "m", "body height above the ground; never negative", (0.0, 1.2)),
        ObsField("vz", "m/s", "vertical body velocity; positive is up", (-5.0, 5.0)),
        ObsField("contact", "flag", "1 when the leg reaches the ground (z <= 0.5), else 0", (0.0, 1.0)),
    ),
    action_dim=1,
    action_bounds=((-1.0, 1.0),),
    dt=0.02,
    max_steps=300,
    dynamics=(
        "1 kg body moving vertically under gravity 9.81 m/s^2. While z <= 0.5 m the leg "
        "pushes with thrust 10*(a0 + 1) N (0 to 20 N); above that the body is ballistic. "
        "The ground clamps z >= 0 and stops downward velocity. No termination."
    ),
    reset_distribution="z uniform in [0.45, 0.5] m, vz = 0, contact = 1.",
    action_descriptions=("leg thrust command; thrust = 10*(a0 + 1) N while in contact",),
)

SCHEMAS = {s.name: s for s in (POINTMASS, CARTPOLE, HOPPER1D)}


def schema(env_name: str) -> EnvSchema:
    try:
        return SCHEMAS[env_name]
    except KeyError:
        raise UnknownEnvironment(
            f"unknown environment {env_name!r}; available: {', '.join(SCHEMAS)}"
        ) from None


class Env:
    """Single-owner episodic environment with a fixed schema."""

    schema: EnvSchema

    def __init__(self):
        self.state: np.ndarray | None = None
        self.steps = 0
        self.done = True

    @property
    def name(self) -> str:
        return self.schema.name

    def reset(self, seed: int) -> np.ndarray:
        if not isinstance(seed, (int, np.integer)) or seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
        rng = np.random.default_rng(int(seed))
        self.state = self._initial_state(rng)
        self.steps = 0
        self.done = False
        return self.observe()

    def clamp(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (self.schema.action_dim,):
            raise ValueError(f"{self.name}: expected {self.schema.action_dim} action components, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"{self.name}: non-finite action {a}")
        lo = np.array([b[0] for b in self.schema.action_bounds])
        hi = np.array([b[1] for b in self.schema.action_bounds])
        return np.clip(a, lo, hi)

    def step(self, action) -> tuple[np.ndarray, bool, bool]:
        if self.done or self.state is None:
            raise EpisodeFinished(f"{self.name}: episode finished; call reset() first")
        a = self.clamp(action)
        self.state = self._integrate(self.state, a)
        self.steps += 1
        terminated = self._terminated(self.state)
        truncated = not terminated and self.steps >= self.schema.max_steps
        self.done = terminated or truncated
        return self.observe(), terminated, truncated

    def observe(self) -> np.ndarray:
        return self.state.copy()

    def set_state(self, values) -> None:
        """Place the system in an arbitrary state and start a fresh episode."""
        self.state = np.asarray(values, dtype=np.float64).copy()
        self.steps = 0
        self.done = False

    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _integrate(self, state: np.ndarray, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _terminated(self, state: np.ndarray) -> bool:
        return False


class PointMass(Env):
    schema = POINTMASS
    mass = 1.0
    friction = 0.5

    def _initial_state(self, rng):
        return np.array([rng.uniform(-0.1, 0.1), 0.0])

    def _integrate(self, state, a):
        x, vx = state
        dt = self.schema.dt
        vx = vx + dt * (a[0] - self.friction * vx) / self.mass
        x = x + dt * vx
        return np.array([x, vx])


class CartPole(Env):
    schema = CARTPOLE
    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5  # half the pole length
    force_mag = 10.0

    def _initial_state(self, rng):
        return np.array([0.0, 0.0, rng.uniform(-0.05, 0.05), 0.0])

    def _integrate(self, state, a):
        x, vx, theta, omega = state
        dt = self.schema.dt
        total_mass = self.masscart + self.masspole
        polemass_length = self.masspole * self.length
        force = self.force_mag * a[0]
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        temp = (force + polemass_length * omega * omega * sin_t) / total_mass
        theta_acc = (self.gravity * sin_t - cos_t * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * cos_t * cos_t / total_mass)
        )
        x_acc = temp - polemass_length * theta_acc * cos_t / total_mass
        vx = vx + dt * x_acc
        x = x + dt * vx
        omega = omega + dt * theta_acc
        theta = theta + dt * omega
        return np.array([x, vx, theta, omega])

    def _terminated(self, state):
        return bool(abs(state[2]) > 0.7 or abs(state[0]) > 2.4)


class Hopper1D(Env):
    schema = HOPPER1D
    mass = 1.0
    gravity = 9.81
    leg_reach = 0.5

    def _initial_state(self, rng):
        return np.array([rng.uniform(0.45, 0.5), 0.0, 1.0])

    def thrust(self, z: float, a0: float) -> float:
        return 10.0 * (a0 + 1.0) if z <= self.leg_reach else 0.0

    def _integrate(self, state, a):
        z, vz, _ = state
        dt = self.schema.dt
        vz = vz + dt * (self.thrust(z, a[0]) / self.mass - self.gravity)
        z = z + dt * vz
        if z <= 0.0:
            z = 0.0
            vz = max(vz, 0.0)
        contact = 1.0 if z <= self.leg_reach else 0.0
        return np.array([z, vz, contact])


ENV_CLASSES = {"pointmass": PointMass, "cartpole": CartPole, "hopper1d": Hopper1D}


def make_env(env_name: str) -> Env:
    schema(env_name)
    return ENV_CLASSES[env_name]()
