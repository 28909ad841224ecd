"""Foraging: minors collect mass from random areas and unload it at a slow major agent."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..measures import BinGrid, mean_per_bin
from .base import ActionSpace, EnvSpec, Environment, SystemState, project_velocity
from .streams import EpisodeStreams


class ForagingParams(BaseModel):
    """Constants of the foraging task. Masses are in mean-field units (per-agent average)."""

    model_config = ConfigDict(extra="forbid")

    v_max: float = Field(0.3, gt=0, description="Maximum minor speed.")
    major_v_max: float = Field(0.1, gt=0, description="Maximum major speed.")
    spawn_rate: float = Field(0.2, ge=0, description="Poisson rate of new areas per step.")
    max_areas: int = Field(5, ge=0)
    size_low: float = Field(0.5, ge=0)
    size_high: float = Field(1.5, ge=0)
    forage_range: float = Field(0.5, gt=0)
    max_depletion: float = Field(0.1, gt=0, description="Upper bound on mass removed per area and step.")
    deposit_range: float = Field(0.5, gt=0)
    capacity: float = Field(1.0, gt=0, description="Maximum encumbrance of a minor agent.")
    reward_scale: float = Field(1.0, description="Reward per unit of deposited mass.")
    major_y_low: float = Field(-2.0)
    major_y_high: float = Field(-1.0)
    episode_len: int = Field(200, ge=1)
    cells_per_dim: int = Field(7, ge=1)
    bound: float = Field(2.0, gt=0)


class ForageOutcome(NamedTuple):
    encumbrance: np.ndarray
    remaining: np.ndarray
    deposited: float
    wasted: float


class ForagingEnv(Environment):
    """Minor states are ``(x, y, encumbrance)``; the major state is its position.

    The area list and the mass ledger (``arrived``, ``deposited``, ``wasted``) live in
    :class:`SystemState` and are not observed by the policy.
    """

    def __init__(self, params: ForagingParams | None = None) -> None:
        self.params = params or ForagingParams()
        b = self.params.bound
        grid = BinGrid(lo=(-b, -b), hi=(b, b), cells_per_dim=(self.params.cells_per_dim,) * 2)
        self.spec = EnvSpec(
            env_id="foraging",
            minor_action_space=ActionSpace.box(2),
            major_action_space=ActionSpace.box(2),
            episode_len=self.params.episode_len,
            bin_grid=grid,
            major_obs_dim=2,
            extra_obs_dim=grid.n_cells,
        )

    def reset(self, n_agents: int, streams: EpisodeStreams) -> SystemState:
        p = self.params
        b = p.bound
        draws = streams.per_agent_uniform(streams.minor, n_agents, (3,))
        minors = np.column_stack([-b + 2 * b * draws[:, :2], p.capacity * draws[:, 2]])
        major = np.array([streams.env.uniform(-b, b), streams.env.uniform(p.major_y_low, p.major_y_high)])
        ledger = {"arrived": float(minors[:, 2].mean()), "deposited": 0.0, "wasted": 0.0}
        return SystemState(t=0, major=major, minors=minors, ledger=ledger)

    def forage_and_deposit(self, state: SystemState) -> ForageOutcome:
        """Deplete areas, split the mass among nearby agents, then unload at the major agent."""
        p = self.params
        pos = state.minors[:, :2]
        raw = state.minors[:, 2].copy()
        remaining = state.areas[:, 2].copy()
        for m, area in enumerate(state.areas):
            weights = np.maximum(0.0, p.forage_range - np.linalg.norm(pos - area[:2], axis=1))
            integral = weights.mean()
            if integral <= 0.0:
                continue
            delta = min(area[2], min(p.max_depletion, integral))
            raw += delta * weights / integral
            remaining[m] = area[2] - delta

        carried = np.minimum(p.capacity, raw)
        wasted = float((raw - carried).mean())
        near = np.linalg.norm(pos - state.major, axis=1) < p.deposit_range
        deposited = float(np.where(near, carried, 0.0).mean())
        return ForageOutcome(np.where(near, 0.0, carried), remaining, deposited, wasted)

    def step(
        self,
        state: SystemState,
        minor_actions: np.ndarray,
        major_action: np.ndarray | None,
        streams: EpisodeStreams,
    ) -> SystemState:
        p = self.params
        b = p.bound
        outcome = self.forage_and_deposit(state)

        pos = np.clip(state.minors[:, :2] + project_velocity(minor_actions, p.v_max), -b, b)
        major = state.major
        if major_action is not None:
            major = major + project_velocity(major_action, p.major_v_max)[0]
        major = np.array([np.clip(major[0], -b, b), np.clip(major[1], p.major_y_low, p.major_y_high)])

        areas = state.areas.copy()
        areas[:, 2] = outcome.remaining
        areas = areas[areas[:, 2] > 0.0]
        n_new = min(int(streams.env.poisson(p.spawn_rate)), p.max_areas - areas.shape[0])
        arrived = 0.0
        if n_new > 0:
            centers = streams.env.uniform(-b, b, size=(n_new, 2))
            sizes = streams.env.uniform(p.size_low, p.size_high, size=n_new)
            areas = np.vstack([areas, np.column_stack([centers, sizes])])
            arrived = float(sizes.sum())

        ledger = dict(state.ledger)
        ledger["arrived"] = ledger.get("arrived", 0.0) + arrived
        ledger["deposited"] = ledger.get("deposited", 0.0) + outcome.deposited
        ledger["wasted"] = ledger.get("wasted", 0.0) + outcome.wasted
        minors = np.column_stack([pos, outcome.encumbrance])
        return state.replace(t=state.t + 1, major=major, minors=minors, areas=areas, ledger=ledger)

    def reward(
        self, state: SystemState, major_action: np.ndarray | None, streams: EpisodeStreams
    ) -> float:
        return self.params.reward_scale * self.forage_and_deposit(state).deposited

    def ledger_imbalance(self, state: SystemState) -> float:
        """``arrived - (remaining + carried + deposited + wasted)``; zero up to rounding."""
        ledger = state.ledger
        held = state.areas[:, 2].sum() + state.minors[:, 2].mean()
        return float(ledger["arrived"] - held - ledger["deposited"] - ledger["wasted"])

    def encode_major(self, state: SystemState) -> np.ndarray:
        p = self.params
        mid = (p.major_y_low + p.major_y_high) / 2
        half = (p.major_y_high - p.major_y_low) / 2
        return np.array([state.major[0] / p.bound, (state.major[1] - mid) / half])

    def observation_extras(self, state: SystemState) -> np.ndarray:
        return mean_per_bin(state.minors[:, :2], state.minors[:, 2], self.spec.bin_grid)
