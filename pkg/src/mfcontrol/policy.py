"""Mean-field policies: observations from ``(x0, mu)``, network heads and decision rules.

The policy network emits one joint action per step: a major action ``u0`` (categorical or
diagonal Gaussian head) and a parameter block ``xi`` drawn from a tanh-squashed diagonal
Gaussian. ``xi`` is decoded into the decision rule every minor agent samples from.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .envs.base import ActionSpace, Environment, FiniteMinorModel, SystemState
from .envs.streams import EpisodeStreams
from .errors import GridMismatchError, NonFiniteLogProbError, ShapeMismatchError
from .measures import MeanFieldHist
from .nn import (
    HeadConfig,
    HeadKind,
    PolicyParams,
    categorical_entropy,
    categorical_kl,
    categorical_logprob_and_grad,
    categorical_probs,
    forward,
    gaussian_entropy,
    gaussian_kl,
    gaussian_logprob_and_grad,
)

logger = logging.getLogger(__name__)

# Keeps every decision-rule probability and every standard deviation strictly positive.
RULE_EPS = 1e-10
STD_SPAN = 0.25
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG_2 = float(np.log(2.0))


class ExecutionMode(str, Enum):
    """Centralized: one shared ``xi`` per step. Decentralized: a fresh ``xi`` per minor agent."""

    CENTRALIZED = "centralized"
    DECENTRALIZED = "decentralized"


# --- observations -----------------------------------------------------------------------


def encode_obs(
    env: Environment,
    state: SystemState,
    hist: MeanFieldHist | None = None,
    extras: np.ndarray | None = None,
) -> np.ndarray:
    """``[major encoding | histogram weights | extra channels]``."""
    if hist is None:
        hist = env.mean_field(state)
    elif hist.grid != env.spec.bin_grid:
        raise GridMismatchError(
            f"Histogram grid {hist.grid.cells_per_dim} does not match the "
            f"'{env.spec.env_id}' grid {env.spec.bin_grid.cells_per_dim}"
        )
    if extras is None:
        extras = env.observation_extras(state)
    return np.concatenate([env.encode_major(state), hist.weights, np.asarray(extras, dtype=float)])


# --- heads ------------------------------------------------------------------------------


def head_for_env(env: Environment) -> HeadConfig:
    """Head layout implied by the environment's action spaces and state space."""
    space = env.spec.major_action_space
    if space is None:
        kind, major_dim = HeadKind.NONE, 0
    elif space.is_discrete:
        kind, major_dim = HeadKind.CATEGORICAL, space.n
    else:
        kind, major_dim = HeadKind.GAUSSIAN, space.dim
    if isinstance(env, FiniteMinorModel):
        xi_dim = env.n_states * env.n_actions
    else:
        xi_dim = env.spec.bin_grid.n_cells * 2 * env.spec.minor_action_space.dim
    return HeadConfig(major_kind=kind, major_dim=major_dim, xi_dim=xi_dim)


def init_params(env: Environment, gen: np.random.Generator, *, hidden: tuple[int, ...] = (256, 256)) -> PolicyParams:
    return PolicyParams.initialise(env.spec.obs_dim, head_for_env(env), gen, hidden=hidden)


def major_action_width(head: HeadConfig) -> int:
    """Stored width of a major action: 1 index, ``d`` coordinates or nothing."""
    if head.major_kind is HeadKind.CATEGORICAL:
        return 1
    if head.major_kind is HeadKind.GAUSSIAN:
        return head.major_dim
    return 0


def _std(log_std: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Standard deviation and the mask of log-stds inside the clip range."""
    clipped = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    return np.exp(clipped), (log_std >= LOG_STD_MIN) & (log_std <= LOG_STD_MAX)


@dataclass(frozen=True)
class HeadOutputs:
    """Network output split into its head blocks (all batched)."""

    major: np.ndarray
    xi_mean: np.ndarray
    xi_log_std: np.ndarray


def split_output(head: HeadConfig, out: np.ndarray) -> HeadOutputs:
    out = np.atleast_2d(out)
    if out.shape[1] != head.output_dim:
        raise ShapeMismatchError(f"Head expects {head.output_dim} outputs, got {out.shape[1]}")
    p = head.major_param_dim
    x = head.xi_dim
    return HeadOutputs(out[:, :p], out[:, p : p + x], out[:, p + x :])


def squash_log_jacobian(z: np.ndarray) -> np.ndarray:
    """``log(1 - tanh(z)^2)`` summed over the last axis, evaluated without cancellation."""
    return (2.0 * (LOG_2 - z - np.logaddexp(0.0, -2.0 * z))).sum(axis=-1)


def joint_logprob(
    head: HeadConfig, out: np.ndarray, major_action: np.ndarray, xi_raw: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Log-probability of ``(u0, xi)`` and its gradient with respect to the network output.

    ``xi_raw`` holds the pre-squash samples; the density of the squashed ``xi`` includes
    the tanh Jacobian, which does not depend on the network output.

    Returns:
        ``(logp, dlogp/dout)`` with shapes ``(B,)`` and ``(B, output_dim)``
    """
    parts = split_output(head, out)
    batch = parts.xi_mean.shape[0]
    grad = np.zeros((batch, head.output_dim))
    p = head.major_param_dim

    logp = np.zeros(batch)
    major_action = np.asarray(major_action, dtype=float).reshape(batch, -1)
    if head.major_kind is HeadKind.CATEGORICAL:
        lp, dlogits = categorical_logprob_and_grad(parts.major, major_action[:, 0])
        logp += lp
        grad[:, :p] = dlogits
    elif head.major_kind is HeadKind.GAUSSIAN:
        d = head.major_dim
        std, inside = _std(parts.major[:, d:])
        lp, dmean, dstd = gaussian_logprob_and_grad(parts.major[:, :d], std, major_action)
        logp += lp
        grad[:, :d] = dmean
        grad[:, d:p] = dstd * std * inside

    z = np.asarray(xi_raw, dtype=float).reshape(batch, head.xi_dim)
    std, inside = _std(parts.xi_log_std)
    lp, dmean, dstd = gaussian_logprob_and_grad(parts.xi_mean, std, z)
    logp += lp - squash_log_jacobian(z)
    grad[:, p : p + head.xi_dim] = dmean
    grad[:, p + head.xi_dim :] = dstd * std * inside

    if not np.all(np.isfinite(logp)):
        raise NonFiniteLogProbError("Joint log-probability is not finite")
    return logp, grad


def head_kl(head: HeadConfig, out_old: np.ndarray, out_new: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``KL(old || new)`` of the joint action distribution and its gradient w.r.t. ``out_new``."""
    old = split_output(head, out_old)
    new = split_output(head, out_new)
    batch = new.xi_mean.shape[0]
    grad = np.zeros((batch, head.output_dim))
    p = head.major_param_dim

    kl = np.zeros(batch)
    if head.major_kind is HeadKind.CATEGORICAL:
        k, dlogits = categorical_kl(old.major, new.major)
        kl += k
        grad[:, :p] = dlogits
    elif head.major_kind is HeadKind.GAUSSIAN:
        d = head.major_dim
        std_old, _ = _std(old.major[:, d:])
        std_new, inside = _std(new.major[:, d:])
        k, dmean, dstd = gaussian_kl(old.major[:, :d], std_old, new.major[:, :d], std_new)
        kl += k
        grad[:, :d] = dmean
        grad[:, d:p] = dstd * std_new * inside

    # The tanh squash is a bijection, so the KL of the pre-squash Gaussians is exact.
    std_old, _ = _std(old.xi_log_std)
    std_new, inside = _std(new.xi_log_std)
    k, dmean, dstd = gaussian_kl(old.xi_mean, std_old, new.xi_mean, std_new)
    kl += k
    grad[:, p : p + head.xi_dim] = dmean
    grad[:, p + head.xi_dim :] = dstd * std_new * inside
    return kl, grad


def head_entropy(head: HeadConfig, out: np.ndarray) -> np.ndarray:
    """Entropy of the major head plus the pre-squash ``xi`` Gaussian."""
    parts = split_output(head, out)
    entropy = gaussian_entropy(_std(parts.xi_log_std)[0])
    if head.major_kind is HeadKind.CATEGORICAL:
        entropy = entropy + categorical_entropy(parts.major)
    elif head.major_kind is HeadKind.GAUSSIAN:
        entropy = entropy + gaussian_entropy(_std(parts.major[:, head.major_dim :])[0])
    return entropy


# --- decision rules ---------------------------------------------------------------------


def decode_finite(xi: np.ndarray) -> np.ndarray:
    """Decision rule ``pi(u|x) = (xi[x, u] + 1 + eps) / Z`` for ``xi`` in ``[-1, 1]^{X x U}``."""
    mass = np.asarray(xi, dtype=float) + 1.0 + RULE_EPS
    return mass / mass.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class GaussianRule:
    """Per-bin diagonal Gaussian action distributions for continuous minor actions."""

    means: np.ndarray
    stds: np.ndarray
    space: ActionSpace

    def sample(self, cells: np.ndarray, normals: np.ndarray) -> np.ndarray:
        """Actions for agents in ``cells``, clamped into the action box."""
        cells = np.asarray(cells, dtype=np.int64)
        actions = self.means[cells] + self.stds[cells] * normals
        return np.clip(actions, self.space.low, self.space.high)


def _squash_gaussian(block: np.ndarray, space: ActionSpace) -> tuple[np.ndarray, np.ndarray]:
    means = space.low + (block[..., 0, :] + 1.0) / 2.0 * (space.high - space.low)
    stds = RULE_EPS + STD_SPAN * (block[..., 1, :] + 1.0) / 2.0
    return means, stds


def decode_continuous(xi: np.ndarray, space: ActionSpace, n_cells: int) -> GaussianRule:
    """Map ``xi`` in ``[-1, 1]^{M x 2 x d}`` to per-bin means in U and stds in ``[eps, 0.25 + eps]``."""
    means, stds = _squash_gaussian(np.asarray(xi, dtype=float).reshape(n_cells, 2, space.dim), space)
    return GaussianRule(means=means, stds=stds, space=space)


def sample_rows(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling of one index per row of ``probs``."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (uniforms[:, None] >= cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def minor_actions_from_xi(
    env: Environment, state: SystemState, xi: np.ndarray, streams: EpisodeStreams
) -> np.ndarray:
    """Sample every minor action; ``xi`` is one squashed block shared by all agents or one per agent."""
    n = state.n_agents
    shared = xi.ndim == 1
    if isinstance(env, FiniteMinorModel):
        x = env.state_index(state)
        table = xi.reshape((env.n_states, env.n_actions) if shared else (n, env.n_states, env.n_actions))
        rows = decode_finite(table[x] if shared else table[np.arange(n), x])
        return sample_rows(rows, streams.per_agent_uniform(streams.actions, n))

    space = env.spec.minor_action_space
    grid = env.spec.bin_grid
    cells = grid.cell_index(env.minor_positions(state))
    normals = streams.per_agent_normal(streams.actions, n, (space.dim,))
    if shared:
        return decode_continuous(xi, space, grid.n_cells).sample(cells, normals)
    means, stds = _squash_gaussian(xi.reshape(n, grid.n_cells, 2, space.dim)[np.arange(n), cells], space)
    return np.clip(means + stds * normals, space.low, space.high)


# --- controllers ------------------------------------------------------------------------


@dataclass(frozen=True)
class Decision:
    """Everything the rollout records for one step."""

    obs: np.ndarray
    major: np.ndarray
    xi_raw: np.ndarray
    logp: float
    value: float
    dist_inputs: np.ndarray
    minor_actions: np.ndarray

    def env_major_action(self, env: Environment) -> np.ndarray | None:
        if env.spec.major_action_space is None:
            return None
        return self.major


class Controller(ABC):
    """Chooses the joint action of one step."""

    @abstractmethod
    def decide(
        self,
        env: Environment,
        state: SystemState,
        streams: EpisodeStreams,
        mode: ExecutionMode,
        *,
        deterministic: bool = False,
    ) -> Decision:
        """Sample ``(u0, xi)``, decode it and sample every minor action.

        Args:
            env: Environment being simulated
            state: Current system state
            streams: Random streams of the episode
            mode: Centralized or decentralized sampling of ``xi``
            deterministic: Use head modes instead of samples

        Returns:
            Decision holding the recorded quantities and the minor actions
        """
        ...

    def state_value(self, env: Environment, state: SystemState) -> float:
        """Critic estimate used to bootstrap truncated episodes."""
        return 0.0


class NetworkPolicy(Controller):
    """Controller backed by the policy and value networks."""

    def __init__(self, env: Environment, params: PolicyParams) -> None:
        head = head_for_env(env)
        if params.head != head or params.policy_spec.input_dim != env.spec.obs_dim:
            raise ShapeMismatchError(
                f"Parameters (head {params.head}, input {params.policy_spec.input_dim}) do not fit "
                f"'{env.spec.env_id}' (head {head}, input {env.spec.obs_dim})"
            )
        self.env = env
        self.params = params
        self.head = head

    def policy_output(self, obs: np.ndarray) -> np.ndarray:
        return forward(self.params.policy, self.params.policy_spec, obs)[0]

    def value(self, obs: np.ndarray) -> np.ndarray:
        out, _ = forward(self.params.value, self.params.value_spec, obs)
        return np.atleast_2d(out)[:, 0]

    def state_value(self, env: Environment, state: SystemState) -> float:
        return float(self.value(encode_obs(env, state))[0])

    def _sample_major(self, parts: HeadOutputs, gen: np.random.Generator, deterministic: bool) -> np.ndarray:
        head = self.head
        if head.major_kind is HeadKind.CATEGORICAL:
            probs = categorical_probs(parts.major[0])
            if deterministic:
                return np.array([float(np.argmax(probs))])
            return sample_rows(probs[None], np.array([gen.random()])).astype(float)
        if head.major_kind is HeadKind.GAUSSIAN:
            d = head.major_dim
            mean = parts.major[0, :d]
            if deterministic:
                return mean.copy()
            return mean + _std(parts.major[0, d:])[0] * gen.standard_normal(d)
        return np.zeros(0)

    def decide(
        self,
        env: Environment,
        state: SystemState,
        streams: EpisodeStreams,
        mode: ExecutionMode,
        *,
        deterministic: bool = False,
    ) -> Decision:
        obs = encode_obs(env, state)
        out = self.policy_output(obs)
        parts = split_output(self.head, out)
        major = self._sample_major(parts, streams.policy, deterministic)

        mean = parts.xi_mean[0]
        std = _std(parts.xi_log_std[0])[0]
        z = mean.copy() if deterministic else mean + std * streams.policy.standard_normal(mean.size)
        logp, _ = joint_logprob(self.head, out, major, z)

        n = state.n_agents
        if mode is ExecutionMode.DECENTRALIZED and n > 1:
            if deterministic:
                z_agents = np.broadcast_to(z, (n, z.size))
            else:
                # One i.i.d. rule per agent; z is only the logged sample.
                z_agents = mean + std * streams.per_agent_normal(streams.agent_policy, n, (mean.size,))
            minor = minor_actions_from_xi(env, state, np.tanh(z_agents), streams)
        else:
            minor = minor_actions_from_xi(env, state, np.tanh(z), streams)

        return Decision(
            obs=obs,
            major=major,
            xi_raw=z,
            logp=float(logp[0]),
            value=float(self.value(obs)[0]),
            dist_inputs=out,
            minor_actions=minor,
        )


class FixedRulePolicy(Controller):
    """Scripted controller: a fixed finite decision rule and a fixed major action.

    Minor actions are drawn from ``rule[x]`` by inverse CDF, so one-hot rows are followed
    exactly.
    """

    def __init__(self, rule: np.ndarray, major_action: int | None = None) -> None:
        self.rule = np.asarray(rule, dtype=float)
        self.major_action = major_action

    def decide(
        self,
        env: Environment,
        state: SystemState,
        streams: EpisodeStreams,
        mode: ExecutionMode,
        *,
        deterministic: bool = False,
    ) -> Decision:
        if not isinstance(env, FiniteMinorModel):
            raise ShapeMismatchError(f"'{env.spec.env_id}' has no finite minor state space")
        x = env.state_index(state)
        minor = sample_rows(self.rule[x], streams.per_agent_uniform(streams.actions, state.n_agents))
        major = np.zeros(0) if self.major_action is None else np.array([float(self.major_action)])
        return Decision(
            obs=encode_obs(env, state),
            major=major,
            xi_raw=np.zeros(0),
            logp=0.0,
            value=0.0,
            dist_inputs=np.zeros(0),
            minor_actions=minor,
        )


def stay_rule(env: FiniteMinorModel) -> np.ndarray:
    """One-hot rule that always picks action 0 (stay on Beach and the cyclic toy)."""
    rule = np.zeros((env.n_states, env.n_actions))
    rule[:, 0] = 1.0
    return rule
