"""Counter-based random streams owned by one episode."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

# Spawn-key namespaces; the per-step reward streams live under their own key.
_STREAM_NAMES = ("env", "minor", "policy", "agent_policy", "actions")
_REWARD_KEY = 7


def _generator(seed: int, key: Sequence[int]) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


class EpisodeStreams:
    """Independent ``Philox`` streams for one (seed, episode) pair.

    Each concern draws from its own stream so that, for example, resampling decision
    rules per agent never shifts the noise seen by the dynamics. Per-agent draws are
    generated in substream order and then mapped to agents through ``agent_order``;
    permuting ``agent_order`` permutes which agent receives which substream.
    """

    def __init__(self, seed: int, episode: int, *, agent_order: np.ndarray | None = None) -> None:
        self.seed = int(seed)
        self.episode = int(episode)
        self.agent_order = None if agent_order is None else np.asarray(agent_order, dtype=np.int64)
        for index, name in enumerate(_STREAM_NAMES):
            setattr(self, name, _generator(self.seed, (self.episode, index)))

    env: np.random.Generator
    minor: np.random.Generator
    policy: np.random.Generator
    agent_policy: np.random.Generator
    actions: np.random.Generator

    def reward(self, t: int) -> np.random.Generator:
        """Fresh stream for the reward evaluated at step ``t`` (recomputable offline)."""
        return _generator(self.seed, (self.episode, _REWARD_KEY, int(t)))

    def _order(self, n: int) -> np.ndarray | None:
        if self.agent_order is None:
            return None
        if self.agent_order.shape != (n,):
            raise ValueError(f"agent_order has length {self.agent_order.size}, expected {n}")
        return self.agent_order

    def per_agent_normal(self, gen: np.random.Generator, n: int, shape: tuple[int, ...] = ()) -> np.ndarray:
        draws = gen.standard_normal((n, *shape))
        order = self._order(n)
        return draws if order is None else draws[order]

    def per_agent_uniform(self, gen: np.random.Generator, n: int, shape: tuple[int, ...] = ()) -> np.ndarray:
        draws = gen.random((n, *shape))
        order = self._order(n)
        return draws if order is None else draws[order]

    def per_agent_integers(self, gen: np.random.Generator, high: int, n: int) -> np.ndarray:
        draws = gen.integers(0, high, size=n)
        order = self._order(n)
        return draws if order is None else draws[order]
