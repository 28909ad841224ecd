"""Exact mean-field limit for finite state spaces.

Provides the deterministic mean-field transition, the one-step law-of-large-numbers gap of
the finite system, and value iteration on a discretised probability simplex for models
small enough to enumerate every deterministic decision rule.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.spatial import cKDTree

from .envs.base import Environment, FiniteMinorModel, SystemState
from .envs.streams import EpisodeStreams
from .errors import MeshTooLargeError, RowNotNormalizedError
from .finite_sim import ReturnEstimate, normal_ci
from .measures import FiniteMF, l1_distance
from .policy import Controller, Decision, ExecutionMode, encode_obs, sample_rows

logger = logging.getLogger(__name__)

ROW_TOL = 1e-12


class ExactModel(Protocol):
    """Finite model whose major process can be enumerated as well."""

    @property
    def n_states(self) -> int: ...

    @property
    def n_actions(self) -> int: ...

    def state_index(self, state: SystemState) -> np.ndarray: ...

    def minor_kernel(self, major: np.ndarray, major_action: int | None, mu: np.ndarray) -> np.ndarray: ...

    @property
    def n_major_states(self) -> int: ...

    @property
    def n_major_actions(self) -> int: ...

    def major_transition(self) -> np.ndarray: ...

    def major_from_index(self, index: int) -> np.ndarray: ...

    def major_index(self, major: np.ndarray) -> int: ...

    def reward_mf(self, major: np.ndarray, mu: np.ndarray) -> float: ...


def _check_rows(table: np.ndarray, what: str) -> None:
    if np.any(table < 0) or np.any(np.abs(table.sum(axis=-1) - 1.0) > ROW_TOL):
        raise RowNotNormalizedError(f"Every {what} row must be a probability vector")


def mf_step(
    kernel: FiniteMinorModel | np.ndarray,
    major: np.ndarray,
    major_action: int | None,
    mu: FiniteMF,
    rule: np.ndarray,
) -> FiniteMF:
    """Next mean field ``mu'(y) = sum_x sum_u mu(x) rule(u|x) p(y|x, u, x0, u0, mu)``.

    Args:
        kernel: Model evaluated at ``(major, major_action, mu)``, or a fixed ``P[x, u, y]``
        major: Major state
        major_action: Major action index (``None`` when uncontrolled)
        mu: Current mean field
        rule: Decision rule ``rule[x, u]``

    Raises:
        RowNotNormalizedError: If a rule or kernel row is not a distribution
    """
    rule = np.asarray(rule, dtype=float)
    _check_rows(rule, "decision rule")
    if isinstance(kernel, np.ndarray):
        table = kernel
    else:
        table = kernel.minor_kernel(major, major_action, mu.probs)
    _check_rows(table, "transition kernel")
    return FiniteMF(probs=np.einsum("x,xu,xuy->y", mu.probs, rule, table))


def allocate_agents(mu: FiniteMF, n_agents: int) -> np.ndarray:
    """Integer agent counts per state closest to ``n_agents * mu`` (largest remainder)."""
    exact = n_agents * mu.probs
    counts = np.floor(exact).astype(np.int64)
    short = n_agents - int(counts.sum())
    if short > 0:
        # Stable sort keeps the lowest index first among equal remainders.
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def lln_gap(
    kernel: FiniteMinorModel | np.ndarray,
    major: np.ndarray,
    major_action: int | None,
    mu: FiniteMF,
    rule: np.ndarray,
    n_agents: int,
    gen: np.random.Generator,
) -> float:
    """L1 distance between one sampled step of ``n_agents`` agents and the exact mean-field step.

    Agents are placed on the atoms of ``mu`` by :func:`allocate_agents`; each samples an
    action from ``rule`` and a successor from the kernel independently.
    """
    if n_agents < 1:
        raise ValueError(f"Need at least one agent, got N={n_agents}")
    counts = allocate_agents(mu, n_agents)
    before = FiniteMF(probs=counts / n_agents)
    table = kernel if isinstance(kernel, np.ndarray) else kernel.minor_kernel(major, major_action, before.probs)
    exact = mf_step(table, major, major_action, before, rule)

    n_states = before.support_size
    after = np.zeros(n_states)
    for x in np.flatnonzero(counts):
        joint = (rule[x][:, None] * table[x]).ravel()
        after += gen.multinomial(counts[x], joint / joint.sum()).reshape(-1, n_states).sum(axis=0)
    return l1_distance(FiniteMF(probs=after / n_agents), exact)


# --- simplex grid -----------------------------------------------------------------------


def _compositions(total: int, parts: int) -> list[tuple[int, ...]]:
    if parts == 1:
        return [(total,)]
    return [(head, *tail) for head in range(total, -1, -1) for tail in _compositions(total - head, parts - 1)]


@dataclass
class SimplexGrid:
    """All distributions on ``support_size`` states with weights in multiples of ``1/resolution``."""

    support_size: int
    resolution: int
    nodes: np.ndarray = field(init=False, repr=False)
    _tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.support_size < 1 or self.resolution < 1:
            raise ValueError("Simplex grids need a positive support size and resolution")
        counts = np.array(_compositions(self.resolution, self.support_size), dtype=float)
        self.nodes = counts / self.resolution
        self._tree = cKDTree(self.nodes)

    @staticmethod
    def size_for(support_size: int, resolution: int) -> int:
        return comb(resolution + support_size - 1, support_size - 1)

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    def nearest(self, weights: np.ndarray) -> np.ndarray:
        """Index of the Euclidean-nearest node for each row of ``weights``."""
        _, idx = self._tree.query(np.atleast_2d(weights))
        return np.asarray(idx, dtype=np.int64)


# --- value iteration --------------------------------------------------------------------


def deterministic_rules(n_states: int, n_actions: int) -> np.ndarray:
    """All ``n_actions ** n_states`` one-hot decision rules, shape ``(R, X, U)``."""
    choices = np.array(list(itertools.product(range(n_actions), repeat=n_states)), dtype=np.int64)
    rules = np.zeros((choices.shape[0], n_states, n_actions))
    rows = np.arange(n_states)
    for r, choice in enumerate(choices):
        rules[r, rows, choice] = 1.0
    return rules


@dataclass
class ValueTable:
    """Values per (major state, simplex node) plus the action mesh they were computed on.

    Action ``a`` of the mesh is major action ``a // n_rules`` combined with rule
    ``a % n_rules``.
    """

    values: np.ndarray
    grid: SimplexGrid
    gamma: float
    rules: np.ndarray
    n_major_actions: int
    residuals: list[float] = field(default_factory=list)

    @property
    def n_rules(self) -> int:
        return int(self.rules.shape[0])

    def decode_action(self, index: int) -> tuple[int, np.ndarray]:
        return index // self.n_rules, self.rules[index % self.n_rules]


@dataclass(frozen=True)
class _BellmanModel:
    rewards: np.ndarray  # (X0, nodes)
    major_next: np.ndarray  # (X0, U0, X0')
    node_next: np.ndarray  # (X0, nodes, A)


def _build_bellman(model: ExactModel, grid: SimplexGrid, rules: np.ndarray) -> _BellmanModel:
    n_major = model.n_major_states
    n_u0 = model.n_major_actions
    n_actions = n_u0 * rules.shape[0]
    rewards = np.zeros((n_major, grid.n_nodes))
    next_mu = np.zeros((n_major, grid.n_nodes, n_actions, grid.support_size))
    for x0 in range(n_major):
        major = model.major_from_index(x0)
        for n, weights in enumerate(grid.nodes):
            rewards[x0, n] = model.reward_mf(major, weights)
            for u0 in range(n_u0):
                kernel = model.minor_kernel(major, u0, weights)
                # (R, X, U) x (X, U, Y) weighted by mu(x)
                step = np.einsum("x,rxu,xuy->ry", weights, rules, kernel)
                next_mu[x0, n, u0 * rules.shape[0] : (u0 + 1) * rules.shape[0]] = step
    node_next = grid.nearest(next_mu.reshape(-1, grid.support_size)).reshape(n_major, grid.n_nodes, n_actions)
    return _BellmanModel(rewards=rewards, major_next=model.major_transition(), node_next=node_next)


def _q_values(bellman: _BellmanModel, values: np.ndarray, gamma: float, n_rules: int) -> np.ndarray:
    n_major, n_nodes, n_actions = bellman.node_next.shape
    u0_of_action = np.arange(n_actions) // n_rules
    # continuation[x0, n, a] = sum_x0' P0[x0, u0(a), x0'] * V[x0', next(x0, n, a)]
    gathered = values[:, bellman.node_next]  # (X0', X0, nodes, A)
    weights = bellman.major_next[:, u0_of_action, :]  # (X0, A, X0')
    continuation = np.einsum("xay,yxna->xna", weights, gathered)
    return bellman.rewards[:, :, None] + gamma * continuation


def value_iteration(
    model: ExactModel,
    grid: SimplexGrid,
    gamma: float = 0.99,
    tol: float = 1e-8,
    *,
    max_mesh: int = 5_000_000,
    max_iters: int = 100_000,
) -> ValueTable:
    """Solve the Bellman equation over (major state, simplex node).

    The action mesh is every deterministic decision rule combined with every major
    action; successor mean fields are projected onto the nearest grid node.

    Raises:
        MeshTooLargeError: If states times actions exceed ``max_mesh``
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    n_rules = model.n_actions**model.n_states
    mesh = model.n_major_states * grid.n_nodes * n_rules * model.n_major_actions
    if mesh > max_mesh:
        raise MeshTooLargeError(f"Value-iteration mesh has {mesh} entries, cap is {max_mesh}")

    rules = deterministic_rules(model.n_states, model.n_actions)
    bellman = _build_bellman(model, grid, rules)
    values = np.zeros((model.n_major_states, grid.n_nodes))
    residuals: list[float] = []
    for sweep in range(max_iters):
        updated = _q_values(bellman, values, gamma, n_rules).max(axis=2)
        residual = float(np.abs(updated - values).max())
        if residuals and residual > residuals[-1] * (1.0 + 1e-9) + 1e-15:
            logger.warning("Bellman residual increased at sweep %d: %.3e > %.3e", sweep, residual, residuals[-1])
        residuals.append(residual)
        values = updated
        if residual <= tol:
            break
    else:
        logger.warning("Value iteration stopped after %d sweeps at residual %.3e", max_iters, residuals[-1])
    logger.info("Value iteration: %d sweeps, residual %.3e", len(residuals), residuals[-1])
    return ValueTable(
        values=values,
        grid=grid,
        gamma=gamma,
        rules=rules,
        n_major_actions=model.n_major_actions,
        residuals=residuals,
    )


@dataclass(frozen=True)
class GreedyPolicy:
    """Stationary deterministic policy: one mesh action per (major state, node)."""

    actions: np.ndarray
    table: ValueTable

    def act(self, major_index: int, mu: np.ndarray) -> tuple[int, np.ndarray]:
        node = int(self.table.grid.nearest(mu)[0])
        return self.table.decode_action(int(self.actions[major_index, node]))


def greedy_policy(table: ValueTable, model: ExactModel) -> GreedyPolicy:
    """Argmax over the value-iteration mesh; ties go to the lowest action index."""
    bellman = _build_bellman(model, table.grid, table.rules)
    q = _q_values(bellman, table.values, table.gamma, table.n_rules)
    return GreedyPolicy(actions=np.argmax(q, axis=2), table=table)


class GreedyController(Controller):
    """Runs a :class:`GreedyPolicy` in the finite system."""

    def __init__(self, model: ExactModel, policy: GreedyPolicy) -> None:
        self.model = model
        self.policy = policy

    def decide(
        self,
        env: Environment,
        state: SystemState,
        streams: EpisodeStreams,
        mode: ExecutionMode,
        *,
        deterministic: bool = False,
    ) -> Decision:
        x = self.model.state_index(state)
        mu = np.bincount(x, minlength=self.model.n_states) / state.n_agents
        u0, rule = self.policy.act(self.model.major_index(state.major), mu)
        minor = sample_rows(rule[x], streams.per_agent_uniform(streams.actions, state.n_agents))
        return Decision(
            obs=encode_obs(env, state),
            major=np.array([float(u0)]),
            xi_raw=np.zeros(0),
            logp=0.0,
            value=0.0,
            dist_inputs=np.zeros(0),
            minor_actions=minor,
        )


def simulate_discounted(
    env: Environment,
    controller: Controller,
    model: ExactModel,
    major_index: int,
    mu: FiniteMF,
    n_agents: int,
    *,
    gamma: float,
    steps: int,
    episodes: int,
    seed: int,
) -> ReturnEstimate:
    """Discounted return of the finite system started from a prescribed ``(x0, mu)``.

    Agents are placed by :func:`allocate_agents`; states are built from
    ``model.major_from_index`` and the flat minor index.
    """
    counts = allocate_agents(mu, n_agents)
    cells = np.repeat(np.arange(mu.support_size), counts)
    returns = np.zeros(episodes)
    for episode in range(episodes):
        streams = EpisodeStreams(seed, episode)
        state = SystemState(
            t=0,
            major=model.major_from_index(major_index),
            minors=cells.astype(float)[:, None],
        )
        discount = 1.0
        for _ in range(steps):
            decision = controller.decide(env, state, streams, ExecutionMode.CENTRALIZED)
            major_action = decision.env_major_action(env)
            returns[episode] += discount * env.reward(state, major_action, streams)
            state = env.step(state, decision.minor_actions, major_action, streams)
            discount *= gamma
    mean, ci = normal_ci(returns)
    return ReturnEstimate(mean=mean, ci=ci, episodes=episodes, returns=returns)


def export_value_table(table: ValueTable, path: Path) -> Path:
    """CSV with columns ``major_state, w0..w{X-1}, value``; one row per (major state, node)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weight_cols = [f"w{i}" for i in range(table.grid.support_size)]
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["major_state", *weight_cols, "value"])
        for x0 in range(table.values.shape[0]):
            for node, weights in enumerate(table.grid.nodes):
                writer.writerow([x0, *(repr(float(w)) for w in weights), repr(float(table.values[x0, node]))])
    return path
