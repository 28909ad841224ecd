"""Potential: minors on a 1-D torus push an uncontrolled major agent towards a target."""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..measures import BinGrid
from .base import ActionSpace, EnvSpec, Environment, SystemState, project_velocity
from .streams import EpisodeStreams


class PotentialParams(BaseModel):
    """Constants of the potential task on the torus ``[-half_width, half_width)``."""

    model_config = ConfigDict(extra="forbid")

    v_max: float = Field(0.3, gt=0)
    force_scale: float = Field(1.0 / 20.0, description="Step size applied to the mean repulsive force.")
    force_range: float = Field(1.0, gt=0, description="Distance at which the repulsion vanishes.")
    target_decay: float = Field(0.99)
    target_var: float = Field(0.005, ge=0)
    episode_len: int = Field(100, ge=1)
    cells: int = Field(7, ge=1)
    half_width: float = Field(2.0, gt=0)


class PotentialEnv(Environment):
    """Major state packs ``(position, target)``; it has no action of its own."""

    def __init__(self, params: PotentialParams | None = None) -> None:
        self.params = params or PotentialParams()
        w = self.params.half_width
        self.spec = EnvSpec(
            env_id="potential",
            minor_action_space=ActionSpace.box(1),
            major_action_space=None,
            episode_len=self.params.episode_len,
            bin_grid=BinGrid(lo=(-w,), hi=(w,), cells_per_dim=(self.params.cells,)),
            major_obs_dim=2,
        )

    @property
    def period(self) -> float:
        return 2.0 * self.params.half_width

    def wrap(self, x: np.ndarray | float) -> np.ndarray:
        w = self.params.half_width
        return (np.asarray(x, dtype=float) + w) % self.period - w

    def torus_distance(self, a: np.ndarray | float, b: np.ndarray | float) -> np.ndarray:
        diff = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % self.period
        return np.minimum(diff, self.period - diff)

    def push(self, major_position: float, minors: np.ndarray) -> float:
        """Displacement of the major agent generated by the minors' linear repulsion.

        Mirror offsets account for the wrap-around; zero distances contribute nothing.
        """
        p = self.params
        x = np.asarray(minors, dtype=float).ravel()
        total = 0.0
        for offset in (-self.period, 0.0, self.period):
            diff = major_position - x + offset
            total += float((np.maximum(0.0, p.force_range - np.abs(diff)) * np.sign(diff)).mean())
        return p.force_scale * total

    def reset(self, n_agents: int, streams: EpisodeStreams) -> SystemState:
        w = self.params.half_width
        minors = -w + 2 * w * streams.per_agent_uniform(streams.minor, n_agents, (1,))
        position = streams.env.uniform(-w, w)
        target = self.wrap(np.sqrt(self.params.target_var) * streams.env.standard_normal())
        return SystemState(t=0, major=np.array([position, float(target)]), minors=self.wrap(minors))

    def step(
        self,
        state: SystemState,
        minor_actions: np.ndarray,
        major_action: np.ndarray | None,
        streams: EpisodeStreams,
    ) -> SystemState:
        p = self.params
        actions = np.asarray(minor_actions, dtype=float).reshape(state.n_agents, 1)
        minors = self.wrap(state.minors + project_velocity(actions, p.v_max))
        position = self.wrap(state.major[0] + self.push(state.major[0], state.minors))
        target = self.wrap(p.target_decay * state.major[1] + np.sqrt(p.target_var) * streams.env.standard_normal())
        major = np.array([float(position), float(target)])
        return state.replace(t=state.t + 1, major=major, minors=minors)

    def reward(
        self, state: SystemState, major_action: np.ndarray | None, streams: EpisodeStreams
    ) -> float:
        return -float(self.torus_distance(state.major[0], state.major[1]))

    def encode_major(self, state: SystemState) -> np.ndarray:
        return state.major / self.params.half_width
