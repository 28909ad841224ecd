from __future__ import annotations

import numpy as np
import pytest

from mfcontrol.envs.base import ActionSpace, EnvSpec, Environment, FiniteMinorModel, SystemState, check_discrete
from mfcontrol.envs.streams import EpisodeStreams
from mfcontrol.measures import BinGrid


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--runslow", action="store_true", default=False, help="Run slow acceptance experiments.")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


class ConstantEnv(Environment, FiniteMinorModel):
    """Two cells, two actions (stay, flip); reward is a constant so returns are known exactly."""

    def __init__(self, reward_value: float = 1.0, episode_len: int = 5) -> None:
        self.reward_value = reward_value
        self.spec = EnvSpec(
            env_id="const",
            minor_action_space=ActionSpace.discrete(2),
            major_action_space=ActionSpace.discrete(2),
            episode_len=episode_len,
            bin_grid=BinGrid(lo=(0.0,), hi=(2.0,), cells_per_dim=(2,)),
            major_obs_dim=1,
            n_minor_states=2,
        )

    @property
    def n_states(self) -> int:
        return 2

    @property
    def n_actions(self) -> int:
        return 2

    def state_index(self, state: SystemState) -> np.ndarray:
        return state.minors[:, 0].astype(np.int64)

    def minor_kernel(self, major: np.ndarray, major_action: int | None, mu: np.ndarray) -> np.ndarray:
        kernel = np.zeros((2, 2, 2))
        kernel[0, 0, 0] = kernel[1, 0, 1] = 1.0
        kernel[0, 1, 1] = kernel[1, 1, 0] = 1.0
        return kernel

    def reset(self, n_agents: int, streams: EpisodeStreams) -> SystemState:
        cells = streams.per_agent_integers(streams.minor, 2, n_agents).astype(float)
        return SystemState(t=0, major=np.array([0.0]), minors=cells[:, None])

    def step(
        self,
        state: SystemState,
        minor_actions: np.ndarray,
        major_action: np.ndarray | None,
        streams: EpisodeStreams,
    ) -> SystemState:
        actions = check_discrete(minor_actions, 2)
        cells = (self.state_index(state) + actions) % 2
        return state.replace(t=state.t + 1, minors=cells.astype(float)[:, None])

    def reward(self, state: SystemState, major_action: np.ndarray | None, streams: EpisodeStreams) -> float:
        return self.reward_value

    def encode_major(self, state: SystemState) -> np.ndarray:
        return np.array([state.t / self.spec.episode_len])


@pytest.fixture
def const_env() -> ConstantEnv:
    return ConstantEnv()


@pytest.fixture
def gen() -> np.random.Generator:
    return np.random.default_rng(1234)
