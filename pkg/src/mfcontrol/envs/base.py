"""Abstract interface shared by all major-minor mean-field environments."""

from __future__ import annotations

import dataclasses
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..errors import InvalidDiscreteActionError
from ..measures import BinGrid, MeanFieldHist, histogram
from .streams import EpisodeStreams


class SpaceKind(str, Enum):
    BOX = "box"
    DISCRETE = "discrete"


class ActionSpace(BaseModel):
    """Either a box ``[low, high]^dim`` or a finite set ``{0..n-1}``."""

    model_config = ConfigDict(frozen=True)

    kind: SpaceKind
    dim: int = 1
    n: int = 0
    low: float = -1.0
    high: float = 1.0

    @classmethod
    def box(cls, dim: int, low: float = -1.0, high: float = 1.0) -> "ActionSpace":
        return cls(kind=SpaceKind.BOX, dim=dim, low=low, high=high)

    @classmethod
    def discrete(cls, n: int) -> "ActionSpace":
        return cls(kind=SpaceKind.DISCRETE, n=n)

    @property
    def is_discrete(self) -> bool:
        return self.kind is SpaceKind.DISCRETE


class EnvSpec(BaseModel):
    """Static description of an environment: spaces, horizon and observation grid."""

    model_config = ConfigDict(frozen=True)

    env_id: str
    minor_action_space: ActionSpace
    major_action_space: ActionSpace | None
    episode_len: int
    bin_grid: BinGrid
    major_obs_dim: int
    extra_obs_dim: int = 0
    # Number of minor states when X is finite; 0 for continuous state spaces.
    n_minor_states: int = 0

    @property
    def is_finite(self) -> bool:
        return self.n_minor_states > 0

    @property
    def obs_dim(self) -> int:
        return self.major_obs_dim + self.bin_grid.n_cells + self.extra_obs_dim


@dataclass(frozen=True)
class SystemState:
    """Major state, the N minor states, the step index and environment bookkeeping.

    ``minors`` is ``(N, d)``; the first ``bin_grid.dims`` columns are the binned position.
    ``areas`` holds Foraging areas as rows ``(cx, cy, remaining)``.
    """

    t: int
    major: np.ndarray
    minors: np.ndarray
    areas: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    ledger: dict[str, float] = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return int(self.minors.shape[0])

    def replace(self, **changes: Any) -> "SystemState":
        return dataclasses.replace(self, **changes)

    def permuted(self, order: np.ndarray) -> "SystemState":
        """Same state with minor agents relabelled by ``order``."""
        return self.replace(minors=self.minors[np.asarray(order)])


def project_velocity(actions: np.ndarray, v_max: float) -> np.ndarray:
    """Clamp actions into ``[-1, 1]^d``, project onto the unit ball and scale by ``v_max``.

    ``actions`` is ``(k, d)``; a single action vector is treated as ``(1, d)``.
    """
    u = np.atleast_2d(np.clip(np.asarray(actions, dtype=float), -1.0, 1.0))
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    return v_max * u / np.maximum(1.0, norms)


def check_discrete(actions: np.ndarray, n: int) -> np.ndarray:
    arr = np.asarray(actions)
    as_int = arr.astype(np.int64)
    if arr.size and (np.any(as_int != arr) or as_int.min() < 0 or as_int.max() >= n):
        raise InvalidDiscreteActionError(f"Discrete actions must lie in 0..{n - 1}, got {arr!r}")
    return as_int


class Environment(ABC):
    """Abstract base class for benchmark environments.

    Rewards follow ``r_t = r(x0_t, u0_t, mu_t)`` and are evaluated on the state *before*
    the transition.
    """

    spec: EnvSpec

    @abstractmethod
    def reset(self, n_agents: int, streams: EpisodeStreams) -> SystemState:
        """Sample an initial state with ``n_agents`` minor agents.

        Args:
            n_agents: Number of minor agents N
            streams: Random streams of the episode

        Returns:
            SystemState at t = 0
        """
        ...

    @abstractmethod
    def step(
        self,
        state: SystemState,
        minor_actions: np.ndarray,
        major_action: np.ndarray | None,
        streams: EpisodeStreams,
    ) -> SystemState:
        """Advance all agents by one step.

        Args:
            state: Current system state
            minor_actions: One action per minor agent (indices or vectors)
            major_action: Major action, ``None`` when the major agent is not controlled
            streams: Random streams of the episode

        Returns:
            SystemState at t + 1
        """
        ...

    @abstractmethod
    def reward(
        self, state: SystemState, major_action: np.ndarray | None, streams: EpisodeStreams
    ) -> float:
        """Reward of the current state and major action (permutation invariant in the minors)."""
        ...

    @abstractmethod
    def encode_major(self, state: SystemState) -> np.ndarray:
        """Network encoding of the major state, length ``spec.major_obs_dim``."""
        ...

    def minor_positions(self, state: SystemState) -> np.ndarray:
        return state.minors[:, : self.spec.bin_grid.dims]

    def mean_field(self, state: SystemState) -> MeanFieldHist:
        return histogram(self.minor_positions(state), self.spec.bin_grid)

    def observation_extras(self, state: SystemState) -> np.ndarray:
        """Additional observation channels appended after the histogram."""
        return np.zeros(0)


class FiniteMinorModel(ABC):
    """Exact description of the minor dynamics for finite state and action sets."""

    @property
    @abstractmethod
    def n_states(self) -> int: ...

    @property
    @abstractmethod
    def n_actions(self) -> int: ...

    @abstractmethod
    def state_index(self, state: SystemState) -> np.ndarray:
        """Flat state index of every minor agent."""
        ...

    @abstractmethod
    def minor_kernel(self, major: np.ndarray, major_action: int | None, mu: np.ndarray) -> np.ndarray:
        """Transition probabilities ``P[x, u, y]`` given the major state and mean field."""
        ...
