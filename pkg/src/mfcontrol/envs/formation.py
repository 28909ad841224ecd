"""Formation: a controlled major agent tracks a moving target while minors surround it."""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..measures import BinGrid
from ..transport import ot_cost
from .base import ActionSpace, EnvSpec, Environment, SystemState, project_velocity
from .streams import EpisodeStreams


class FormationParams(BaseModel):
    """Physical constants of the formation task."""

    model_config = ConfigDict(extra="forbid")

    v_max: float = Field(0.2, gt=0, description="Maximum speed of minor and major agents.")
    formation_var: float = Field(0.3, gt=0, description="Per-axis variance of the desired formation.")
    target_decay: float = Field(0.95, description="Mean reversion factor of the target.")
    target_var: float = Field(0.02, ge=0, description="Per-axis variance of the target noise.")
    episode_len: int = Field(100, ge=1)
    cells_per_dim: int = Field(7, ge=1)
    bound: float = Field(2.0, gt=0)


class FormationEnv(Environment):
    """Noise-free movement; major state is ``(position, target)`` packed as 4 numbers."""

    def __init__(self, params: FormationParams | None = None) -> None:
        self.params = params or FormationParams()
        b = self.params.bound
        self.spec = EnvSpec(
            env_id="formation",
            minor_action_space=ActionSpace.box(2),
            major_action_space=ActionSpace.box(2),
            episode_len=self.params.episode_len,
            bin_grid=BinGrid(lo=(-b, -b), hi=(b, b), cells_per_dim=(self.params.cells_per_dim,) * 2),
            major_obs_dim=4,
        )

    def reset(self, n_agents: int, streams: EpisodeStreams) -> SystemState:
        b = self.params.bound
        minors = -b + 2 * b * streams.per_agent_uniform(streams.minor, n_agents, (2,))
        position = streams.env.uniform(-b, b, size=2)
        target = np.clip(np.sqrt(self.params.target_var) * streams.env.standard_normal(2), -b, b)
        return SystemState(t=0, major=np.concatenate([position, target]), minors=minors)

    def step(
        self,
        state: SystemState,
        minor_actions: np.ndarray,
        major_action: np.ndarray | None,
        streams: EpisodeStreams,
    ) -> SystemState:
        b = self.params.bound
        p = self.params
        minors = np.clip(state.minors + project_velocity(minor_actions, p.v_max), -b, b)
        position = state.major[:2]
        if major_action is not None:
            position = np.clip(position + project_velocity(major_action, p.v_max)[0], -b, b)
        target = p.target_decay * state.major[2:] + np.sqrt(p.target_var) * streams.env.standard_normal(2)
        major = np.concatenate([position, np.clip(target, -b, b)])
        return state.replace(t=state.t + 1, major=major, minors=minors)

    def target_cloud(self, state: SystemState, streams: EpisodeStreams) -> np.ndarray:
        """Samples of the desired formation around the major agent; one per minor agent."""
        gen = streams.reward(state.t)
        noise = gen.standard_normal((state.n_agents, 2))
        return state.major[:2] + np.sqrt(self.params.formation_var) * noise

    def reward(
        self, state: SystemState, major_action: np.ndarray | None, streams: EpisodeStreams
    ) -> float:
        tracking = float(np.linalg.norm(state.major[:2] - state.major[2:]))
        return -tracking - ot_cost(state.minors, self.target_cloud(state, streams))

    def encode_major(self, state: SystemState) -> np.ndarray:
        return state.major / self.params.bound
