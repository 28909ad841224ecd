"""Beach bar process on a discrete torus: gather near a moving bar, avoid crowding."""

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

# Action index -> displacement: stay, then the four cardinal moves.
MOVES = np.array([(0, 0), (-1, 0), (0, -1), (1, 0), (0, 1)], dtype=np.int64)


class BeachParams(BaseModel):
    """Constants of the beach bar process."""

    model_config = ConfigDict(extra="forbid")

    size: int = Field(5, ge=2, description="Side length of the torus.")
    target_walk_prob: float = Field(0.2, ge=0, le=1, description="Probability that the bar moves.")
    target_weight: float = Field(0.5, description="Cost per unit major-to-bar distance.")
    distance_weight: float = Field(2.5, description="Cost per unit mean minor-to-major distance.")
    crowd_weight: float = Field(6.25, description="Cost per unit crowdedness (sum of squared masses).")
    episode_len: int = Field(200, ge=1)


def torus_l1(a: np.ndarray, b: np.ndarray, size: int) -> np.ndarray:
    """Wrap-around L1 distance on a ``size x size`` torus (last axis holds coordinates)."""
    diff = np.abs(np.asarray(a) - np.asarray(b)) % size
    return np.minimum(diff, size - diff).sum(axis=-1)


class BeachEnv(Environment, FiniteMinorModel):
    """Major state packs ``(bar x, bar y, target x, target y)``; minors are ``(x, y)`` cells."""

    def __init__(self, params: BeachParams | None = None) -> None:
        self.params = params or BeachParams()
        s = self.params.size
        self.spec = EnvSpec(
            env_id="beach",
            minor_action_space=ActionSpace.discrete(len(MOVES)),
            major_action_space=ActionSpace.discrete(len(MOVES)),
            episode_len=self.params.episode_len,
            bin_grid=BinGrid(lo=(0.0, 0.0), hi=(float(s), float(s)), cells_per_dim=(s, s)),
            major_obs_dim=4 * s,
            n_minor_states=s * s,
        )
        cells = np.array([(x, y) for x in range(s) for y in range(s)], dtype=np.int64)
        self._cells = cells
        self._distances = torus_l1(cells[:, None, :], cells[None, :, :], s)

    @property
    def n_states(self) -> int:
        return self.params.size**2

    @property
    def n_actions(self) -> int:
        return len(MOVES)

    def move(self, positions: np.ndarray, actions: np.ndarray) -> np.ndarray:
        idx = check_discrete(actions, len(MOVES))
        return (np.asarray(positions, dtype=np.int64) + MOVES[idx]) % self.params.size

    def reset(self, n_agents: int, streams: EpisodeStreams) -> SystemState:
        s = self.params.size
        minors = streams.per_agent_integers(streams.minor, s * s, n_agents)
        bar = streams.env.integers(0, s, size=2)
        major = np.array([bar[0], bar[1], 0, 0], dtype=float)
        return SystemState(t=0, major=major, minors=self._cells[minors].astype(float))

    def step(
        self,
        state: SystemState,
        minor_actions: np.ndarray,
        major_action: np.ndarray | None,
        streams: EpisodeStreams,
    ) -> SystemState:
        minors = self.move(state.minors, minor_actions)
        bar = state.major[:2]
        if major_action is not None:
            bar = self.move(bar, np.asarray(major_action).reshape(-1)[:1])[0]
        target = state.major[2:].astype(np.int64)
        walk = streams.env.random() < self.params.target_walk_prob
        direction = streams.env.integers(1, len(MOVES))
        if walk:
            target = self.move(target, np.array([direction]))[0]
        major = np.concatenate([np.asarray(bar, dtype=float), target.astype(float)])
        return state.replace(t=state.t + 1, major=major, minors=minors.astype(float))

    def state_index(self, state: SystemState) -> np.ndarray:
        cells = state.minors.astype(np.int64)
        return cells[:, 0] * self.params.size + cells[:, 1]

    def reward_mf(self, major: np.ndarray, mu: np.ndarray) -> float:
        """Reward as a function of the major state and a distribution over cells."""
        p = self.params
        bar = np.asarray(major[:2], dtype=np.int64)
        target = np.asarray(major[2:], dtype=np.int64)
        bar_idx = bar[0] * p.size + bar[1]
        mu = np.asarray(mu, dtype=float)
        return float(
            -p.target_weight * torus_l1(bar, target, p.size)
            - p.distance_weight * mu @ self._distances[:, bar_idx]
            - p.crowd_weight * mu @ mu
        )

    def reward(
        self, state: SystemState, major_action: np.ndarray | None, streams: EpisodeStreams
    ) -> float:
        mu = np.bincount(self.state_index(state), minlength=self.n_states) / state.n_agents
        return self.reward_mf(state.major, mu)

    def minor_kernel(self, major: np.ndarray, major_action: int | None, mu: np.ndarray) -> np.ndarray:
        kernel = np.zeros((self.n_states, self.n_actions, self.n_states))
        s = self.params.size
        for u in range(self.n_actions):
            nxt = (self._cells + MOVES[u]) % s
            kernel[np.arange(self.n_states), u, nxt[:, 0] * s + nxt[:, 1]] = 1.0
        return kernel

    def encode_major(self, state: SystemState) -> np.ndarray:
        s = self.params.size
        coords = state.major.astype(np.int64)
        return np.eye(s)[coords].ravel()
