"""N-agent rollouts of the finite system and Monte-Carlo return estimates."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .envs.base import Environment, SystemState
from .envs.streams import EpisodeStreams
from .policy import Controller, ExecutionMode
from .workers import map_jobs

logger = logging.getLogger(__name__)

Z_95 = float(norm.ppf(0.975))


@dataclass(frozen=True)
class EpisodeJob:
    """One (possibly truncated) episode to simulate."""

    n_agents: int
    seed: int
    episode: int
    steps: int
    mode: ExecutionMode = ExecutionMode.CENTRALIZED
    deterministic: bool = False
    record_states: bool = False
    agent_order: tuple[int, ...] | None = None


@dataclass(frozen=True)
class EpisodeRecord:
    """Per-step arrays of one episode."""

    obs: np.ndarray
    major: np.ndarray
    xi_raw: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dist_inputs: np.ndarray
    complete: bool
    bootstrap: float
    states: list[SystemState] | None
    final_state: SystemState


@dataclass(frozen=True)
class TrajectoryBatch:
    """Concatenated episodes in step order.

    ``dones[t]`` marks the last step of a complete episode; ``truncated[t]`` marks the
    last step of an episode cut at the batch edge, whose successor value is
    ``bootstrap[t]``.
    """

    obs: np.ndarray
    major: np.ndarray
    xi_raw: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dist_inputs: np.ndarray
    dones: np.ndarray
    truncated: np.ndarray
    bootstrap: np.ndarray
    episode_starts: np.ndarray
    episode_returns: np.ndarray
    states: list[SystemState] | None = None
    final_states: list[SystemState] | None = None

    def __len__(self) -> int:
        return int(self.rewards.shape[0])


def run_episode(env: Environment, controller: Controller, job: EpisodeJob) -> EpisodeRecord:
    """Simulate ``job.steps`` steps of episode ``job.episode`` from a fresh reset."""
    order = None if job.agent_order is None else np.asarray(job.agent_order)
    streams = EpisodeStreams(job.seed, job.episode, agent_order=order)
    state = env.reset(job.n_agents, streams)

    rows: dict[str, list[np.ndarray | float]] = {
        key: [] for key in ("obs", "major", "xi_raw", "logp", "rewards", "values", "dist_inputs")
    }
    states: list[SystemState] | None = [] if job.record_states else None
    for _ in range(job.steps):
        decision = controller.decide(env, state, streams, job.mode, deterministic=job.deterministic)
        major_action = decision.env_major_action(env)
        reward = env.reward(state, major_action, streams)
        if states is not None:
            states.append(state)
        rows["obs"].append(decision.obs)
        rows["major"].append(decision.major)
        rows["xi_raw"].append(decision.xi_raw)
        rows["logp"].append(decision.logp)
        rows["rewards"].append(reward)
        rows["values"].append(decision.value)
        rows["dist_inputs"].append(decision.dist_inputs)
        state = env.step(state, decision.minor_actions, major_action, streams)

    complete = job.steps == env.spec.episode_len
    bootstrap = 0.0 if complete else controller.state_value(env, state)

    def _stack(key: str) -> np.ndarray:
        # Every row is a 1-D array, so this is (steps, width) even for width 0.
        return np.asarray(rows[key], dtype=float)

    return EpisodeRecord(
        obs=_stack("obs"),
        major=_stack("major"),
        xi_raw=_stack("xi_raw"),
        logp=np.asarray(rows["logp"], dtype=float),
        rewards=np.asarray(rows["rewards"], dtype=float),
        values=np.asarray(rows["values"], dtype=float),
        dist_inputs=_stack("dist_inputs"),
        complete=complete,
        bootstrap=bootstrap,
        states=states,
        final_state=state,
    )


def episode_jobs(
    env: Environment,
    n_agents: int,
    steps: int,
    *,
    seed: int,
    episode_offset: int = 0,
    mode: ExecutionMode = ExecutionMode.CENTRALIZED,
    deterministic: bool = False,
    record_states: bool = False,
    bootstrap: bool = True,
    agent_order: tuple[int, ...] | None = None,
) -> list[EpisodeJob]:
    """Split ``steps`` into full episodes plus, when allowed, one truncated remainder."""
    if n_agents < 1:
        raise ValueError(f"Need at least one minor agent, got N={n_agents}")
    length = env.spec.episode_len
    full, rest = divmod(steps, length)
    if rest and not bootstrap:
        raise ValueError(f"steps={steps} is not a multiple of the episode length {length}")
    lengths = [length] * full + ([rest] if rest else [])
    return [
        EpisodeJob(
            n_agents=n_agents,
            seed=seed,
            episode=episode_offset + index,
            steps=n_steps,
            mode=mode,
            deterministic=deterministic,
            record_states=record_states,
            agent_order=agent_order,
        )
        for index, n_steps in enumerate(lengths)
    ]


def merge_episodes(records: list[EpisodeRecord]) -> TrajectoryBatch:
    """Concatenate episode records into one batch."""
    if not records:
        empty = np.zeros(0)
        return TrajectoryBatch(
            obs=np.zeros((0, 0)), major=np.zeros((0, 0)), xi_raw=np.zeros((0, 0)), logp=empty,
            rewards=empty, values=empty, dist_inputs=np.zeros((0, 0)), dones=np.zeros(0, dtype=bool),
            truncated=np.zeros(0, dtype=bool), bootstrap=empty, episode_starts=np.zeros(0, dtype=np.int64),
            episode_returns=empty,
        )
    lengths = [rec.rewards.size for rec in records]
    ends = np.cumsum(lengths) - 1
    total = int(sum(lengths))
    dones = np.zeros(total, dtype=bool)
    truncated = np.zeros(total, dtype=bool)
    bootstrap = np.zeros(total)
    for rec, end in zip(records, ends):
        if rec.rewards.size == 0:
            continue
        if rec.complete:
            dones[end] = True
        else:
            truncated[end] = True
            bootstrap[end] = rec.bootstrap

    states = None
    if all(rec.states is not None for rec in records):
        states = [s for rec in records for s in rec.states]  # type: ignore[union-attr]
    return TrajectoryBatch(
        obs=np.concatenate([rec.obs for rec in records]),
        major=np.concatenate([rec.major for rec in records]),
        xi_raw=np.concatenate([rec.xi_raw for rec in records]),
        logp=np.concatenate([rec.logp for rec in records]),
        rewards=np.concatenate([rec.rewards for rec in records]),
        values=np.concatenate([rec.values for rec in records]),
        dist_inputs=np.concatenate([rec.dist_inputs for rec in records]),
        dones=dones,
        truncated=truncated,
        bootstrap=bootstrap,
        episode_starts=np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64),
        episode_returns=np.array([rec.rewards.sum() for rec in records if rec.complete]),
        states=states,
        final_states=[rec.final_state for rec in records],
    )


def rollout(
    env: Environment,
    controller: Controller,
    n_agents: int,
    steps: int,
    mode: ExecutionMode = ExecutionMode.CENTRALIZED,
    *,
    seed: int,
    episode_offset: int = 0,
    deterministic: bool = False,
    record_states: bool = False,
    bootstrap: bool = True,
    agent_order: tuple[int, ...] | None = None,
    workers: int = 1,
    dump_path: Path | None = None,
) -> TrajectoryBatch:
    """Collect ``steps`` environment steps with ``n_agents`` minor agents.

    Args:
        env: Environment to simulate
        controller: Policy choosing the joint action every step
        n_agents: Number of minor agents N
        steps: Total number of steps; a remainder shorter than an episode is truncated
        mode: Centralized or decentralized sampling of the decision rules
        seed: Root seed; episode ``k`` of this batch uses streams ``(seed, episode_offset + k)``
        episode_offset: Index of the first episode
        deterministic: Use head modes instead of samples
        record_states: Keep the state before every step
        bootstrap: Allow a truncated final episode (bootstrapped with the critic)
        agent_order: Permutation mapping per-agent random substreams to agents
        workers: Number of threads simulating episodes
        dump_path: When given, also write the batch as a trajectory dump

    Returns:
        TrajectoryBatch with episodes in index order
    """
    jobs = episode_jobs(
        env,
        n_agents,
        steps,
        seed=seed,
        episode_offset=episode_offset,
        mode=mode,
        deterministic=deterministic,
        record_states=record_states,
        bootstrap=bootstrap,
        agent_order=agent_order,
    )
    batch = merge_episodes(map_jobs(partial(run_episode, env, controller), jobs, workers))
    logger.debug("Collected %d steps over %d episodes (N=%d, %s)", len(batch), len(jobs), n_agents, mode.value)
    if dump_path is not None:
        from .trajectory_io import DumpHeader, write_dump

        header = DumpHeader(
            env_id=env.spec.env_id,
            n_agents=n_agents,
            seed=seed,
            mode=mode,
            episode_offset=episode_offset,
            steps=steps,
            deterministic=deterministic,
        )
        write_dump(dump_path, header, batch)
    return batch


@dataclass(frozen=True)
class ReturnEstimate:
    """Mean undiscounted episode return with a normal-approximation 95% CI half-width."""

    mean: float
    ci: float
    episodes: int
    returns: np.ndarray


def normal_ci(returns: np.ndarray) -> tuple[float, float]:
    """Sample mean and ``z_0.975 * s / sqrt(n)``."""
    returns = np.asarray(returns, dtype=float)
    if returns.size < 2:
        raise ValueError("A confidence interval needs at least two episodes")
    return float(returns.mean()), Z_95 * float(returns.std(ddof=1)) / np.sqrt(returns.size)


def evaluate_return(
    env: Environment,
    controller: Controller,
    n_agents: int,
    episodes: int,
    mode: ExecutionMode = ExecutionMode.CENTRALIZED,
    *,
    seed: int,
    episode_offset: int = 0,
    deterministic: bool = False,
    workers: int = 1,
) -> ReturnEstimate:
    """Monte-Carlo estimate of the undiscounted episode return."""
    if episodes < 2:
        raise ValueError(f"Need at least two episodes, got {episodes}")
    jobs = episode_jobs(
        env,
        n_agents,
        episodes * env.spec.episode_len,
        seed=seed,
        episode_offset=episode_offset,
        mode=mode,
        deterministic=deterministic,
        bootstrap=False,
    )
    records = map_jobs(partial(run_episode, env, controller), jobs, workers)
    returns = np.array([rec.rewards.sum() for rec in records])
    mean, ci = normal_ci(returns)
    return ReturnEstimate(mean=mean, ci=ci, episodes=episodes, returns=returns)


def discounted_return(rewards: np.ndarray, gamma: float) -> float:
    return float(np.sum(np.asarray(rewards) * gamma ** np.arange(len(rewards))))
