"""Evaluation harness: N-transfer sweeps, execution-mode comparison, LLN rates and PG consistency."""

from __future__ import annotations

import csv
import json
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.stats import spearmanr

from .checkpoint import load_checkpoint
from .envs.base import Environment, FiniteMinorModel
from .envs.streams import EpisodeStreams
from .errors import NonFiniteGapError, ZeroGradientNormError
from .finite_sim import evaluate_return
from .measures import FiniteMF
from .mf_limit import lln_gap
from .nn import PolicyParams
from .policy import Controller, ExecutionMode, NetworkPolicy

logger = logging.getLogger(__name__)

REFERENCE_N = 500
MIN_EPISODES = 30
_LLN_KEY = 2_000_003

PolicySource = Path | str | PolicyParams | Controller


def resolve_controller(env: Environment, policy: PolicySource) -> tuple[Controller, str]:
    """Turn a checkpoint path, parameter set or controller into a controller and an id.

    Raises:
        CheckpointError: If a checkpoint path cannot be read
        CheckpointEnvMismatchError: If the checkpoint was trained on another environment
    """
    if isinstance(policy, Controller):
        return policy, type(policy).__name__
    if isinstance(policy, PolicyParams):
        return NetworkPolicy(env, policy), f"params@{policy.steps}"
    params, _ = load_checkpoint(Path(policy), env_id=env.spec.env_id)
    return NetworkPolicy(env, params), Path(policy).name


# --- transfer sweeps --------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    n_agents: int
    mean: float
    ci: float
    episodes: int


@dataclass(frozen=True)
class SweepResult:
    """Mean episode return per N, with the reference population size included."""

    env_id: str
    checkpoint: str
    mode: ExecutionMode
    reference_n: int
    seed: int
    rows: list[SweepRow] = field(default_factory=list)

    def __post_init__(self) -> None:
        ns = [row.n_agents for row in self.rows]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError(f"Sweep Ns must be strictly increasing, got {ns}")

    @property
    def reference(self) -> SweepRow:
        return next(row for row in self.rows if row.n_agents == self.reference_n)

    def csv_rows(self) -> list[dict[str, Any]]:
        return [
            {
                "env": self.env_id,
                "N": row.n_agents,
                "mode": self.mode.value,
                "mean": row.mean,
                "ci": row.ci,
                "episodes": row.episodes,
                "seed": self.seed,
            }
            for row in self.rows
        ]


TRANSFER_FIELDS = ["env", "N", "mode", "mean", "ci", "episodes", "seed"]
RATE_FIELDS = ["env", "N", "mean_gap", "draws"]
PG_FIELDS = ["env", "N", "cos_sim", "seeds"]


def transfer_sweep(
    env: Environment,
    policy: PolicySource,
    ns: Sequence[int],
    mode: ExecutionMode = ExecutionMode.CENTRALIZED,
    episodes: int = 100,
    *,
    seed: int = 0,
    reference_n: int = REFERENCE_N,
    deterministic: bool = False,
    workers: int = 1,
) -> SweepResult:
    """Evaluate one policy at every N plus the reference N.

    Every N replays the same episode indices, so initial conditions share seeds.

    Raises:
        ValueError: If fewer than ``MIN_EPISODES`` episodes are requested
        CheckpointEnvMismatchError: If a checkpoint belongs to another environment
    """
    if episodes < MIN_EPISODES:
        raise ValueError(f"A sweep needs at least {MIN_EPISODES} episodes per point, got {episodes}")
    controller, checkpoint_id = resolve_controller(env, policy)
    rows = []
    for n in sorted(set(ns) | {reference_n}):
        estimate = evaluate_return(
            env, controller, n, episodes, mode, seed=seed, deterministic=deterministic, workers=workers
        )
        logger.info("N=%d %s: %.4f ± %.4f", n, mode.value, estimate.mean, estimate.ci)
        rows.append(SweepRow(n_agents=n, mean=estimate.mean, ci=estimate.ci, episodes=episodes))
    return SweepResult(
        env_id=env.spec.env_id,
        checkpoint=checkpoint_id,
        mode=mode,
        reference_n=reference_n,
        seed=seed,
        rows=rows,
    )


def transfer_trend(result: SweepResult) -> float:
    """Spearman correlation of ``|J^N - J^ref|`` against N over the non-reference rows."""
    rows = [row for row in result.rows if row.n_agents != result.reference_n]
    if len(rows) < 2:
        return float("nan")
    gaps = [abs(row.mean - result.reference.mean) for row in rows]
    rho, _ = spearmanr([row.n_agents for row in rows], gaps)
    return float(rho)


def cde_compare(
    env: Environment,
    policy: PolicySource,
    n_agents: int,
    episodes: int = 100,
    *,
    seed: int = 0,
    deterministic: bool = False,
    workers: int = 1,
) -> tuple[SweepResult, SweepResult]:
    """Paired centralized and decentralized evaluation at one N with shared episode seeds."""
    controller, _ = resolve_controller(env, policy)
    return tuple(  # type: ignore[return-value]
        transfer_sweep(
            env,
            controller,
            [n_agents],
            mode,
            episodes,
            seed=seed,
            reference_n=n_agents,
            deterministic=deterministic,
            workers=workers,
        )
        for mode in (ExecutionMode.CENTRALIZED, ExecutionMode.DECENTRALIZED)
    )


def intervals_overlap(a: SweepRow, b: SweepRow) -> bool:
    return abs(a.mean - b.mean) <= a.ci + b.ci


# --- propagation of chaos ---------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    """Mean one-step gaps per N and the least-squares slope of ``log gap`` on ``log N``.

    ``degenerate`` is set (and ``slope`` is NaN) when any mean gap is exactly zero.
    """

    env_id: str
    ns: list[int]
    mean_gaps: list[float]
    draws: int
    slope: float
    degenerate: bool

    def csv_rows(self) -> list[dict[str, Any]]:
        return [
            {"env": self.env_id, "N": n, "mean_gap": gap, "draws": self.draws}
            for n, gap in zip(self.ns, self.mean_gaps)
        ]


def random_rule(n_states: int, n_actions: int, gen: np.random.Generator) -> np.ndarray:
    """A fully stochastic decision rule with Dirichlet(1) rows."""
    return gen.dirichlet(np.ones(n_actions), size=n_states)


def fit_loglog_slope(ns: Sequence[int], gaps: Sequence[float]) -> tuple[float, bool]:
    """Return ``(slope, degenerate)``."""
    gaps = np.asarray(gaps, dtype=float)
    if not np.all(np.isfinite(gaps)):
        raise NonFiniteGapError(f"Non-finite mean gap in {gaps.tolist()}")
    if np.any(gaps <= 0.0) or len(gaps) < 2:
        logger.warning("Rate fit is degenerate (gaps %s)", gaps.tolist())
        return float("nan"), True
    slope, _ = np.polyfit(np.log(np.asarray(ns, dtype=float)), np.log(gaps), 1)
    return float(slope), False


def lln_rate_fit(
    model: FiniteMinorModel | np.ndarray,
    rule: np.ndarray,
    ns: Sequence[int],
    draws: int = 200,
    *,
    seed: int = 0,
    mu: FiniteMF | None = None,
    major: np.ndarray | None = None,
    major_action: int | None = None,
    env_id: str | None = None,
) -> RateFit:
    """Empirical rate at which one step of N agents approaches the exact mean-field step.

    Args:
        model: Finite environment, or a fixed kernel ``P[x, u, y]``
        rule: Decision rule ``rule[x, u]`` used by every agent
        ns: Population sizes
        draws: Independent one-step samples per N
        seed: Root seed; N draws from its own stream
        mu: Starting mean field (uniform by default)
        major: Major state (drawn from a reset of ``model`` by default)
        major_action: Major action index
        env_id: Label for the output rows

    Raises:
        NonFiniteGapError: If a gap is NaN or infinite
    """
    if isinstance(model, np.ndarray):
        n_states = model.shape[0]
        major = np.zeros(0) if major is None else major
        label = env_id or "kernel"
    else:
        n_states = model.n_states
        if major is None and isinstance(model, Environment):
            major = model.reset(1, EpisodeStreams(seed, 0)).major
        major = np.zeros(0) if major is None else major
        label = env_id or getattr(getattr(model, "spec", None), "env_id", type(model).__name__)
    mu = mu or FiniteMF(probs=np.full(n_states, 1.0 / n_states))

    ns = sorted(ns)
    means = []
    for n in ns:
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(_LLN_KEY, n))))
        gaps = np.array([lln_gap(model, major, major_action, mu, rule, n, gen) for _ in range(draws)])
        if not np.all(np.isfinite(gaps)):
            raise NonFiniteGapError(f"Non-finite LLN gap at N={n}")
        means.append(float(gaps.mean()))
        logger.debug("N=%d mean gap %.6g", n, means[-1])
    slope, degenerate = fit_loglog_slope(ns, means)
    return RateFit(env_id=label, ns=list(ns), mean_gaps=means, draws=draws, slope=slope, degenerate=degenerate)


# --- policy-gradient consistency --------------------------------------------------------


GradientEstimator = Callable[[int, int, int], np.ndarray]
"""``(n_agents, episodes, seed) -> gradient``."""


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroGradientNormError("Cosine similarity is undefined for a zero gradient")
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class ConsistencyResult:
    env_id: str
    ns: list[int]
    cos_sim: list[float]
    seeds: int
    reference_n: int

    def csv_rows(self) -> list[dict[str, Any]]:
        return [
            {"env": self.env_id, "N": n, "cos_sim": c, "seeds": self.seeds}
            for n, c in zip(self.ns, self.cos_sim)
        ]


def pg_consistency(
    env: Environment,
    params: PolicyParams,
    ns: Sequence[int],
    ref_n: int = REFERENCE_N,
    seeds: Sequence[int] = tuple(range(20)),
    *,
    episodes: int = 10,
    ref_episodes: int = 100,
    ref_seed: int = 1_000_000,
    gamma: float = 0.99,
    workers: int = 1,
    estimator: GradientEstimator | None = None,
) -> ConsistencyResult:
    """Mean cosine similarity between finite-N gradient estimates and a large-N reference.

    Raises:
        ZeroGradientNormError: If any estimate has zero norm
    """
    if estimator is None:
        from .algo import estimate_pg

        def estimator(n: int, n_episodes: int, seed: int) -> np.ndarray:
            return estimate_pg(env, params, n, n_episodes, gamma, seed=seed, workers=workers)

    reference = estimator(ref_n, ref_episodes, ref_seed)
    curve = []
    for n in ns:
        sims = [cosine_similarity(estimator(n, episodes, s), reference) for s in seeds]
        curve.append(float(np.mean(sims)))
        logger.info("N=%d mean cosine similarity %.4f", n, curve[-1])
    return ConsistencyResult(
        env_id=env.spec.env_id, ns=list(ns), cos_sim=curve, seeds=len(seeds), reference_n=ref_n
    )


# --- output -----------------------------------------------------------------------------


def _cell(value: Any) -> Any:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else value


def write_table(path: Path, rows: list[dict[str, Any]], fieldnames: list[str]) -> tuple[Path, Path]:
    """Write ``rows`` as CSV and mirror them as plot-data JSON next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row[k]) for k in fieldnames})
    json_path = path.with_suffix(".json")
    json_path.write_text(
        json.dumps({"columns": fieldnames, "rows": [{k: row[k] for k in fieldnames} for row in rows]}, indent=2),
        encoding="utf-8",
    )
    return path, json_path
