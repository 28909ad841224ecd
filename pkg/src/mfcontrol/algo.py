"""Policy-gradient training on the mean-field MDP observed through the finite system."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Iterator
from dataclasses import asdict, dataclass
from enum import Enum
from functools import partial
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .checkpoint import save_checkpoint
from .envs.base import Environment
from .errors import LengthMismatchError, NonFiniteLossError
from .finite_sim import TrajectoryBatch, episode_jobs, merge_episodes, normal_ci, rollout, run_episode
from .nn import AdamState, PolicyParams, adam_step, backward, forward
from .policy import NetworkPolicy, head_entropy, head_kl, init_params, joint_logprob
from .workers import map_jobs

logger = logging.getLogger(__name__)

# Spawn key of the trainer's own stream (initialisation and minibatch shuffles).
_TRAINER_KEY = 1_000_003


class Algorithm(str, Enum):
    PPO = "ppo"
    A2C = "a2c"


class Preset(str, Enum):
    """``full`` keeps the full-scale hyperparameters, ``desk`` shrinks batches and N."""

    FULL = "full"
    DESK = "desk"


_DESK = {"batch": 4000, "minibatch": 1000, "n_agents": 10}


class TrainConfig(BaseModel):
    """Hyperparameters of the training loop (``train.*`` in config files)."""

    model_config = ConfigDict(extra="forbid")

    preset: Preset = Field(Preset.FULL, description="Hyperparameter preset applied before explicit values.")
    algo: Algorithm = Algorithm.PPO
    gamma: float = Field(0.99, description="Discount factor.")
    gae_lambda: float = Field(1.0, description="GAE lambda.")
    kl_coeff: float = Field(0.03, ge=0, description="Fixed KL penalty coefficient.")
    clip: float = Field(0.2, gt=0, description="PPO ratio clip; inf disables clipping.")
    lr: float = Field(5e-5, gt=0)
    batch: int = Field(24000, ge=1, description="Environment steps per iteration.")
    minibatch: int = Field(4000, ge=1)
    sgd_iters: int = Field(8, ge=1)
    n_agents: int = Field(300, ge=1, description="Minor agents during training.")
    total_steps: int = Field(24_000_000, ge=0)
    value_coeff: float = Field(0.5, ge=0)
    max_grad_norm: float = Field(10.0, gt=0)
    hidden: tuple[int, ...] = (256, 256)
    checkpoint_every: int = Field(10, ge=1, description="Iterations between periodic checkpoints.")
    seed: int | None = Field(None, description="Training seed; falls back to the run seed.")

    @model_validator(mode="before")
    @classmethod
    def _apply_preset(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("preset") == Preset.DESK:
            return {**_DESK, **data}
        return data

    @field_validator("gamma")
    @classmethod
    def _discount(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("gamma must lie strictly between 0 and 1")
        return value

    @field_validator("gae_lambda")
    @classmethod
    def _lambda(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        return value

    @model_validator(mode="after")
    def _minibatch_divides_batch(self) -> "TrainConfig":
        if self.batch % self.minibatch:
            raise ValueError(f"minibatch {self.minibatch} does not divide batch {self.batch}")
        return self


# --- advantages -------------------------------------------------------------------------


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    lam: float,
    *,
    truncated: np.ndarray | None = None,
    bootstrap: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and value targets (``advantages + values``).

    After a ``done`` step the successor value is 0; after a ``truncated`` step (and after
    the final step of the arrays) it is ``bootstrap[t]`` (0 when not given).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    n = rewards.size
    truncated = np.zeros(n, dtype=bool) if truncated is None else np.asarray(truncated, dtype=bool)
    bootstrap = np.zeros(n) if bootstrap is None else np.asarray(bootstrap, dtype=float)
    if not (values.size == dones.size == truncated.size == bootstrap.size == n):
        raise LengthMismatchError(
            f"rewards ({n}), values ({values.size}), dones ({dones.size}) must have equal lengths"
        )

    advantages = np.zeros(n)
    next_adv = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            next_value, next_adv = 0.0, 0.0
        elif truncated[t] or t == n - 1:
            next_value, next_adv = bootstrap[t], 0.0
        else:
            next_value = values[t + 1]
        delta = rewards[t] + gamma * next_value - values[t]
        advantages[t] = delta + gamma * lam * next_adv
        next_adv = advantages[t]
    return advantages, advantages + values


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    centred = advantages - advantages.mean()
    std = centred.std()
    return centred / std if std > 1e-12 else centred


# --- updates ----------------------------------------------------------------------------


@dataclass(frozen=True)
class UpdateStats:
    policy_loss: float
    value_loss: float
    kl: float
    clip_frac: float
    entropy: float
    grad_norm: float
    aborted: bool = False


@dataclass(frozen=True)
class ObjectiveResult:
    loss: float
    grad: np.ndarray
    policy_loss: float
    value_loss: float
    kl: float
    clip_frac: float
    entropy: float


def ppo_objective(
    params: PolicyParams,
    batch: TrajectoryBatch,
    idx: np.ndarray,
    advantages: np.ndarray,
    targets: np.ndarray,
    *,
    clip: float,
    kl_coeff: float,
    value_coeff: float,
) -> ObjectiveResult:
    """Loss ``-clip_surrogate + kl_coeff * KL(old || new) + value_coeff * MSE`` and its gradient.

    ``advantages`` and ``targets`` are indexed like ``batch``; only rows ``idx`` are used.
    """
    head = params.head
    obs = batch.obs[idx]
    size = idx.size
    out, tape = forward(params.policy, params.policy_spec, obs)
    logp, dlogp = joint_logprob(head, out, batch.major[idx], batch.xi_raw[idx])

    adv = advantages[idx]
    ratio = np.exp(logp - batch.logp[idx])
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    unclipped_term = ratio * adv
    surrogate = np.minimum(unclipped_term, clipped * adv)
    # The clipped branch is constant in the parameters.
    active = unclipped_term <= clipped * adv
    grad_out = (-(active * unclipped_term) / size)[:, None] * dlogp

    kl, dkl = head_kl(head, batch.dist_inputs[idx], out)
    if kl_coeff:
        grad_out = grad_out + kl_coeff * dkl / size

    values, value_tape = forward(params.value, params.value_spec, obs)
    values = np.atleast_2d(values)[:, 0]
    residual = values - targets[idx]
    value_loss = float(np.mean(residual**2))
    grad_value = (value_coeff * 2.0 * residual / size)[:, None]

    policy_loss = -float(surrogate.mean())
    loss = policy_loss + kl_coeff * float(kl.mean()) + value_coeff * value_loss
    grad = np.concatenate([backward(tape, grad_out), backward(value_tape, grad_value)])
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NonFiniteLossError(f"Training loss is not finite (loss={loss})")
    return ObjectiveResult(
        loss=loss,
        grad=grad,
        policy_loss=policy_loss,
        value_loss=value_loss,
        kl=float(kl.mean()),
        clip_frac=float(np.mean(np.abs(ratio - 1.0) > clip)),
        entropy=float(head_entropy(head, out).mean()),
    )


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


def _advantages(batch: TrajectoryBatch, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    adv, targets = gae(
        batch.rewards,
        batch.values,
        batch.dones,
        cfg.gamma,
        cfg.gae_lambda,
        truncated=batch.truncated,
        bootstrap=batch.bootstrap,
    )
    return normalize_advantages(adv), targets


def _run_passes(
    batch: TrajectoryBatch,
    params: PolicyParams,
    opt: AdamState,
    cfg: TrainConfig,
    gen: np.random.Generator,
    *,
    passes: int,
    minibatch: int,
    clip: float,
    kl_coeff: float,
) -> tuple[PolicyParams, AdamState, UpdateStats]:
    advantages, targets = _advantages(batch, cfg)
    n = len(batch)
    n_minibatches = max(1, math.ceil(n / minibatch))
    values, state = params.values, opt
    results: list[ObjectiveResult] = []
    norms: list[float] = []
    try:
        for _ in range(passes):
            order = np.arange(n) if n_minibatches == 1 else gen.permutation(n)
            for chunk in np.array_split(order, n_minibatches):
                result = ppo_objective(
                    params.with_values(values),
                    batch,
                    chunk,
                    advantages,
                    targets,
                    clip=clip,
                    kl_coeff=kl_coeff,
                    value_coeff=cfg.value_coeff,
                )
                grad, norm = clip_grad_norm(result.grad, cfg.max_grad_norm)
                values, state = adam_step(values, grad, state, cfg.lr)
                results.append(result)
                norms.append(norm)
    except NonFiniteLossError as exc:
        logger.warning("Update aborted, keeping previous parameters: %s", exc)
        nan = float("nan")
        return params, opt, UpdateStats(nan, nan, nan, nan, nan, nan, aborted=True)

    updated = params.with_values(values)
    stats = UpdateStats(
        policy_loss=float(np.mean([r.policy_loss for r in results])),
        value_loss=float(np.mean([r.value_loss for r in results])),
        kl=float(np.mean([r.kl for r in results])),
        clip_frac=float(np.mean([r.clip_frac for r in results])),
        entropy=float(np.mean([r.entropy for r in results])),
        grad_norm=float(np.mean(norms)),
    )
    return updated, state, stats


def ppo_update(
    batch: TrajectoryBatch,
    params: PolicyParams,
    opt: AdamState,
    cfg: TrainConfig,
    gen: np.random.Generator,
) -> tuple[PolicyParams, AdamState, UpdateStats]:
    """``cfg.sgd_iters`` shuffled passes of minibatch Adam steps on the clipped, KL-penalised loss.

    A non-finite loss aborts the whole update and returns the inputs unchanged.
    """
    return _run_passes(
        batch, params, opt, cfg, gen,
        passes=cfg.sgd_iters, minibatch=cfg.minibatch, clip=cfg.clip, kl_coeff=cfg.kl_coeff,
    )


def a2c_update(
    batch: TrajectoryBatch,
    params: PolicyParams,
    opt: AdamState,
    cfg: TrainConfig,
    gen: np.random.Generator | None = None,
) -> tuple[PolicyParams, AdamState, UpdateStats]:
    """One full-batch step on the advantage-weighted log-probability plus value regression."""
    return _run_passes(
        batch, params, opt, cfg, gen or np.random.default_rng(0),
        passes=1, minibatch=max(1, len(batch)), clip=math.inf, kl_coeff=0.0,
    )


# --- training loop ----------------------------------------------------------------------


@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    env_steps: int
    mean_return: float
    ci: float
    episodes: int
    kl: float
    clip_frac: float
    policy_loss: float
    value_loss: float
    entropy: float
    grad_norm: float


METRIC_FIELDS = [name for name in IterationMetrics.__dataclass_fields__]


def append_metrics(path: Path, metrics: IterationMetrics) -> None:
    """Append one row to a metrics CSV, writing the header first when the file is new."""
    path = Path(path)
    new = not path.exists()
    with path.open("a", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        if new:
            writer.writeheader()
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(metrics).items()})


class Trainer:
    """Alternates centralized rollouts and policy updates; the only writer of parameters."""

    def __init__(
        self,
        env: Environment,
        cfg: TrainConfig,
        *,
        seed: int = 0,
        workers: int = 1,
        checkpoint_dir: Path | None = None,
        params: PolicyParams | None = None,
    ) -> None:
        self.env = env
        self.cfg = cfg
        self.seed = cfg.seed if cfg.seed is not None else seed
        self.workers = workers
        self.checkpoint_dir = None if checkpoint_dir is None else Path(checkpoint_dir)
        self.gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(_TRAINER_KEY,)))
        )
        self.params = params or init_params(env, self.gen, hidden=cfg.hidden)
        self.opt = AdamState.zeros(self.params.values.size)
        self.iteration = 0

    @property
    def n_iterations(self) -> int:
        return self.cfg.total_steps // self.cfg.batch

    def save(self, name: str) -> Path | None:
        if self.checkpoint_dir is None:
            return None
        return save_checkpoint(self.checkpoint_dir / name, self.params, self.env.spec.env_id)

    def _update(self, batch: TrajectoryBatch) -> UpdateStats:
        update = ppo_update if self.cfg.algo is Algorithm.PPO else a2c_update
        self.params, self.opt, stats = update(batch, self.params, self.opt, self.cfg, self.gen)
        return stats

    def run(self) -> Iterator[IterationMetrics]:
        """Yield one metrics row per iteration; checkpoints are written along the way."""
        self.save("step_0000000000.ckpt")
        self.save("latest.ckpt")
        episodes_per_batch = math.ceil(self.cfg.batch / self.env.spec.episode_len)
        for iteration in range(self.n_iterations):
            batch = rollout(
                self.env,
                NetworkPolicy(self.env, self.params),
                self.cfg.n_agents,
                self.cfg.batch,
                seed=self.seed,
                episode_offset=iteration * episodes_per_batch,
                workers=self.workers,
            )
            stats = self._update(batch)
            self.iteration = iteration + 1
            self.params.steps = self.iteration * self.cfg.batch

            returns = batch.episode_returns
            if returns.size >= 2:
                mean, ci = normal_ci(returns)
            else:
                mean, ci = (float(returns.mean()) if returns.size else float("nan")), 0.0
            metrics = IterationMetrics(
                iteration=self.iteration,
                env_steps=self.params.steps,
                mean_return=mean,
                ci=ci,
                episodes=int(returns.size),
                kl=stats.kl,
                clip_frac=stats.clip_frac,
                policy_loss=stats.policy_loss,
                value_loss=stats.value_loss,
                entropy=stats.entropy,
                grad_norm=stats.grad_norm,
            )
            logger.info(
                "iter %d steps %d return %.4f ± %.4f kl %.4g",
                metrics.iteration, metrics.env_steps, metrics.mean_return, metrics.ci, metrics.kl,
            )
            if self.iteration % self.cfg.checkpoint_every == 0 or self.iteration == self.n_iterations:
                self.save(f"step_{self.params.steps:010d}.ckpt")
                self.save("latest.ckpt")
            yield metrics


def train(
    env: Environment,
    cfg: TrainConfig,
    *,
    seed: int = 0,
    workers: int = 1,
    checkpoint_dir: Path | None = None,
) -> Iterator[IterationMetrics]:
    """Run training and stream per-iteration metrics."""
    return Trainer(env, cfg, seed=seed, workers=workers, checkpoint_dir=checkpoint_dir).run()


# --- raw policy gradient ----------------------------------------------------------------


def estimate_pg(
    env: Environment,
    params: PolicyParams,
    n_agents: int,
    episodes: int,
    gamma: float,
    *,
    seed: int,
    episode_offset: int = 0,
    workers: int = 1,
) -> np.ndarray:
    """Score-function gradient of the discounted return w.r.t. the policy-network parameters.

    ``mean over episodes of sum_t gamma^t G_t grad log pi(a_t | s_t)`` where ``G_t`` is the
    observed discounted reward-to-go; no critic is involved.
    """
    if episodes < 1:
        raise ValueError(f"Need at least one episode, got {episodes}")
    controller = NetworkPolicy(env, params)
    jobs = episode_jobs(
        env, n_agents, episodes * env.spec.episode_len,
        seed=seed, episode_offset=episode_offset, bootstrap=False,
    )
    batch = merge_episodes(map_jobs(partial(run_episode, env, controller), jobs, workers))

    weights = np.zeros(len(batch))
    length = env.spec.episode_len
    discounts = gamma ** np.arange(length)
    for start in batch.episode_starts:
        rewards = batch.rewards[start : start + length]
        to_go = np.flip(np.cumsum(np.flip(rewards * discounts))) / discounts
        weights[start : start + length] = discounts * to_go

    out, tape = forward(params.policy, params.policy_spec, batch.obs)
    _, dlogp = joint_logprob(params.head, out, batch.major, batch.xi_raw)
    return backward(tape, weights[:, None] * dlogp) / episodes
