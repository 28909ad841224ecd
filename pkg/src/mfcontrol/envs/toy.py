"""Three-cell cyclic beach with a static target, small enough for exact dynamic programming."""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..measures import BinGrid
from .base import (
    ActionSpace,
    EnvSpec,
    Environment,
    FiniteMinorModel,
    SystemState,
    check_discrete,
)
from .streams import EpisodeStreams

# stay, clockwise, counter-clockwise
SHIFTS = np.array([0, 1, -1], dtype=np.int64)


class ToyParams(BaseModel):
    """Constants of the cyclic toy."""

    model_config = ConfigDict(extra="forbid")

    cells: int = Field(3, ge=2)
    target: int = Field(0, ge=0)
    slip: float = Field(0.0, ge=0, le=1, description="Probability that a minor move fails.")
    target_weight: float = Field(0.5)
    distance_weight: float = Field(2.5)
    crowd_weight: float = Field(6.25)
    episode_len: int = Field(100, ge=1)


class CyclicToyEnv(Environment, FiniteMinorModel):
    """Major state packs ``(bar, target)``; the major agent moves deterministically."""

    def __init__(self, params: ToyParams | None = None) -> None:
        self.params = params or ToyParams()
        c = self.params.cells
        if self.params.target >= c:
            raise ValueError(f"target must be a cell index below {c}")
        self.spec = EnvSpec(
            env_id="toy3",
            minor_action_space=ActionSpace.discrete(len(SHIFTS)),
            major_action_space=ActionSpace.discrete(len(SHIFTS)),
            episode_len=self.params.episode_len,
            bin_grid=BinGrid(lo=(0.0,), hi=(float(c),), cells_per_dim=(c,)),
            major_obs_dim=c,
            n_minor_states=c,
        )
        cells = np.arange(c)
        diff = np.abs(cells[:, None] - cells[None, :])
        self._distances = np.minimum(diff, c - diff)

    @property
    def n_states(self) -> int:
        return self.params.cells

    @property
    def n_actions(self) -> int:
        return len(SHIFTS)

    @property
    def n_major_states(self) -> int:
        return self.params.cells

    @property
    def n_major_actions(self) -> int:
        return len(SHIFTS)

    def major_transition(self) -> np.ndarray:
        """``P0[x0, u0, x0']`` for the bar position."""
        c = self.params.cells
        table = np.zeros((c, len(SHIFTS), c))
        for x in range(c):
            for u, shift in enumerate(SHIFTS):
                table[x, u, (x + shift) % c] = 1.0
        return table

    def major_from_index(self, index: int) -> np.ndarray:
        return np.array([float(index), float(self.params.target)])

    def major_index(self, major: np.ndarray) -> int:
        return int(major[0])

    def reward_mf(self, major: np.ndarray, mu: np.ndarray) -> float:
        p = self.params
        bar = int(major[0])
        mu = np.asarray(mu, dtype=float)
        return float(
            -p.target_weight * self._distances[bar, int(major[1])]
            - p.distance_weight * mu @ self._distances[:, bar]
            - p.crowd_weight * mu @ mu
        )

    def minor_kernel(self, major: np.ndarray, major_action: int | None, mu: np.ndarray) -> np.ndarray:
        c = self.params.cells
        kernel = np.zeros((c, len(SHIFTS), c))
        for x in range(c):
            for u, shift in enumerate(SHIFTS):
                kernel[x, u, (x + shift) % c] += 1.0 - self.params.slip
                kernel[x, u, x] += self.params.slip
        return kernel

    def state_index(self, state: SystemState) -> np.ndarray:
        return state.minors[:, 0].astype(np.int64)

    def reset(self, n_agents: int, streams: EpisodeStreams) -> SystemState:
        c = self.params.cells
        minors = streams.per_agent_integers(streams.minor, c, n_agents).astype(float)
        bar = float(streams.env.integers(0, c))
        return SystemState(t=0, major=np.array([bar, float(self.params.target)]), minors=minors[:, None])

    def step(
        self,
        state: SystemState,
        minor_actions: np.ndarray,
        major_action: np.ndarray | None,
        streams: EpisodeStreams,
    ) -> SystemState:
        c = self.params.cells
        actions = check_discrete(minor_actions, len(SHIFTS))
        moves = streams.per_agent_uniform(streams.minor, state.n_agents) >= self.params.slip
        cells = (self.state_index(state) + np.where(moves, SHIFTS[actions], 0)) % c
        bar = int(state.major[0])
        if major_action is not None:
            u0 = check_discrete(np.asarray(major_action).reshape(-1)[:1], len(SHIFTS))[0]
            bar = (bar + SHIFTS[u0]) % c
        major = np.array([float(bar), state.major[1]])
        return state.replace(t=state.t + 1, major=major, minors=cells.astype(float)[:, None])

    def reward(
        self, state: SystemState, major_action: np.ndarray | None, streams: EpisodeStreams
    ) -> float:
        mu = np.bincount(self.state_index(state), minlength=self.n_states) / state.n_agents
        return self.reward_mf(state.major, mu)

    def encode_major(self, state: SystemState) -> np.ndarray:
        return np.eye(self.params.cells)[int(state.major[0])]
