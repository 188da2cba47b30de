"""Native continuous-control environments and rollout utilities."""

from .dynamics import (
    CARTPOLE,
    HOPPER1D,
    POINTMASS,
    SCHEMAS,
    CartPole,
    Env,
    EpisodeFinished,
    Hopper1D,
    PointMass,
    make_env,
    schema,
)
from .rollout import (
    Step,
    Trajectory,
    read_trajectory,
    rollout,
    run_episode,
    trajectory_csv,
    transition_context,
    write_trajectory,
)
from .schema import EnvSchema, ObsField, UnknownEnvironment

__all__ = [
    "CARTPOLE",
    "HOPPER1D",
    "POINTMASS",
    "SCHEMAS",
    "CartPole",
    "Env",
    "EnvSchema",
    "EpisodeFinished",
    "Hopper1D",
    "ObsField",
    "PointMass",
    "Step",
    "Trajectory",
    "UnknownEnvironment",
    "make_env",
    "read_trajectory",
    "rollout",
    "run_episode",
    "schema",
    "trajectory_csv",
    "transition_context",
    "write_trajectory",
]
