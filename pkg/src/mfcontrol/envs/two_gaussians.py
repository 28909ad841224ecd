"""Two-Gaussians tracking: minor agents follow a periodic mixture of two Gaussians."""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..measures import BinGrid
from ..transport import ot_cost
from .base import ActionSpace, EnvSpec, Environment, SystemState, project_velocity
from .streams import EpisodeStreams


class TwoGaussiansParams(BaseModel):
    """Physical constants of the two-Gaussians task."""

    model_config = ConfigDict(extra="forbid")

    v_max: float = Field(0.2, gt=0, description="Maximum minor speed per step.")
    noise_var: float = Field(0.03, ge=0, description="Per-axis variance of the movement noise.")
    target_var: float = Field(0.05, gt=0, description="Per-axis variance of each mixture component.")
    period: int = Field(50, ge=1, description="Clock period; also the number of major states.")
    episode_len: int = Field(100, ge=1)
    cells_per_dim: int = Field(7, ge=1, description="Histogram cells per axis (M = cells^2).")
    bound: float = Field(2.0, gt=0, description="Minor states live in [-bound, bound]^2.")


def mixture_weight(t: int, period: int = 50) -> float:
    """Weight of the ``+e1`` component at clock value ``t``."""
    return (1.0 + np.cos(2.0 * np.pi * t / period)) / 2.0


class TwoGaussiansEnv(Environment):
    """Noisy single-integrator swarm; the major state is a clock modulo ``period``."""

    def __init__(self, params: TwoGaussiansParams | None = None) -> None:
        self.params = params or TwoGaussiansParams()
        b = self.params.bound
        self.spec = EnvSpec(
            env_id="2g",
            minor_action_space=ActionSpace.box(2),
            major_action_space=None,
            episode_len=self.params.episode_len,
            bin_grid=BinGrid(lo=(-b, -b), hi=(b, b), cells_per_dim=(self.params.cells_per_dim,) * 2),
            major_obs_dim=2,
        )

    def reset(self, n_agents: int, streams: EpisodeStreams) -> SystemState:
        b = self.params.bound
        minors = -b + 2 * b * streams.per_agent_uniform(streams.minor, n_agents, (2,))
        return SystemState(t=0, major=np.array([0.0]), minors=minors)

    def step(
        self,
        state: SystemState,
        minor_actions: np.ndarray,
        major_action: np.ndarray | None,
        streams: EpisodeStreams,
    ) -> SystemState:
        b = self.params.bound
        noise = np.sqrt(self.params.noise_var) * streams.per_agent_normal(streams.minor, state.n_agents, (2,))
        moved = state.minors + project_velocity(minor_actions, self.params.v_max) + noise
        clock = (int(state.major[0]) + 1) % self.params.period
        return state.replace(t=state.t + 1, major=np.array([float(clock)]), minors=np.clip(moved, -b, b))

    def target_cloud(self, state: SystemState, streams: EpisodeStreams) -> np.ndarray:
        """Samples of the desired mixture; one per minor agent."""
        gen = streams.reward(state.t)
        n = state.n_agents
        weight = mixture_weight(int(state.major[0]), self.params.period)
        first = gen.random(n) < weight
        centers = np.where(first[:, None], np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
        return centers + np.sqrt(self.params.target_var) * gen.standard_normal((n, 2))

    def reward(
        self, state: SystemState, major_action: np.ndarray | None, streams: EpisodeStreams
    ) -> float:
        return -ot_cost(state.minors, self.target_cloud(state, streams))

    def encode_major(self, state: SystemState) -> np.ndarray:
        phase = 2.0 * np.pi * float(state.major[0]) / self.params.period
        return np.array([np.cos(phase), np.sin(phase)])
