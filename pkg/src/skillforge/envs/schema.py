from __future__ import annotations

import re
from dataclasses import dataclass

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class UnknownEnvironment(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown environment"


@dataclass(frozen=True)
class ObsField:
    name: str
    unit: str
    description: str
    soft_bounds: tuple[float, float]


@dataclass(frozen=True)
class EnvSchema:
    """Machine-readable description of one environment."""

    name: str
    fields: tuple[ObsField, ...]
    action_dim: int
    action_bounds: tuple[tuple[float, float], ...]
    dt: float
    max_steps: int
    dynamics: str
    reset_distribution: str
    action_descriptions: tuple[str, ...] = ()

    def __post_init__(self):
        names = self.field_names
        if len(set(names)) != len(names):
            raise ValueError(f"{self.name}: duplicate observation field names")
        for n in names:
            if not _IDENT.match(n) or n.startswith("prev_"):
                raise ValueError(f"{self.name}: field name {n!r} is not a valid identifier")
        if self.action_dim < 1 or len(self.action_bounds) != self.action_dim:
            raise ValueError(f"{self.name}: action bounds must list {self.action_dim} components")
        if any(lo > hi for lo, hi in self.action_bounds):
            raise ValueError(f"{self.name}: action lower bound above upper bound")
        if not self.dt > 0 or self.max_steps < 1:
            raise ValueError(f"{self.name}: dt must be positive and max_steps at least 1")

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    @property
    def obs_dim(self) -> int:
        return len(self.fields)

    def card(self) -> str:
        """Plain-text rendering used in prompts."""
        lines = [
            f"Environment: {self.name}",
            f"Timestep dt = {self.dt} s; episodes last at most {self.max_steps} steps.",
            "Observation fields (next state is bare, previous state is prev_<name>):",
        ]
        for f in self.fields:
            lo, hi = f.soft_bounds
            lines.append(f"  - {f.name} [{f.unit}] typically in [{lo}, {hi}]: {f.description}")
        lines.append("Action components:")
        for i, (lo, hi) in enumerate(self.action_bounds):
            desc = self.action_descriptions[i] if i < len(self.action_descriptions) else ""
            lines.append(f"  - a{i} in [{lo}, {hi}]" + (f": {desc}" if desc else ""))
        lines.append("Also available: t (0-based step index), dt (timestep in seconds).")
        lines.append(f"Dynamics: {self.dynamics}")
        lines.append(f"Reset: {self.reset_distribution}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "fields": [
                {"name": f.name, "unit": f.unit, "description": f.description, "soft_bounds": list(f.soft_bounds)}
                for f in self.fields
            ],
            "action_dim": self.action_dim,
            "action_bounds": [list(b) for b in self.action_bounds],
            "dt": self.dt,
            "max_steps": self.max_steps,
            "dynamics": self.dynamics,
            "reset_distribution": self.reset_distribution,
        }
