"""Command-line interface for the mean-field control lab."""

from __future__ import annotations

import logging
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import numpy as np
import typer
from pydantic import ValidationError
from rich import print_json
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .algo import Trainer, append_metrics
from .chaos_eval import (
    PG_FIELDS,
    RATE_FIELDS,
    TRANSFER_FIELDS,
    MIN_EPISODES,
    SweepResult,
    SweepRow,
    lln_rate_fit,
    pg_consistency,
    random_rule,
    resolve_controller,
    transfer_sweep,
    transfer_trend,
    write_table,
)
from .checkpoint import load_checkpoint
from .envs.base import Environment, FiniteMinorModel
from .errors import MFControlError
from .finite_sim import evaluate_return, rollout
from .measures import FiniteMF
from .mf_limit import (
    GreedyController,
    SimplexGrid,
    export_value_table,
    greedy_policy,
    simulate_discounted,
    value_iteration,
)
from .nn import PolicyParams
from .parser import ConfigParseError
from .policy import ExecutionMode, init_params
from .settings import RunConfig, load_run_config
from .trajectory_io import read_dump
from .workers import default_workers

logger = logging.getLogger(__name__)
console = Console()

app = typer.Typer(
    help="Train and evaluate major-minor mean-field control policies.",
    add_completion=True,
)

CONFIG_ARG = typer.Argument(..., exists=True, dir_okay=False, readable=True, help="Run config (key = value).")


@app.callback()
def _main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Log debug messages.")) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


@contextmanager
def _exit_codes() -> Iterator[None]:
    """Map configuration problems to exit code 2 and runtime failures to exit code 1."""
    try:
        yield
    except (ConfigParseError, ValidationError) as exc:
        typer.secho(f"Configuration error: {exc}", fg=typer.colors.RED, err=True)
        raise typer.Exit(code=2) from exc
    except (MFControlError, ValueError) as exc:
        typer.secho(f"Error: {exc}", fg=typer.colors.RED, err=True)
        raise typer.Exit(code=1) from exc


def _parse_ns(text: Optional[str]) -> Optional[list[int]]:
    if text is None:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigParseError(f"Expected comma-separated integers, got '{text}'") from exc


def _load(config: Path, **overrides: object) -> tuple[RunConfig, Environment, int]:
    cfg = load_run_config(config, overrides)
    try:
        env = cfg.make_env()
    except ValueError as exc:
        raise ConfigParseError(str(exc)) from exc
    workers = cfg.workers or default_workers()
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg, env, workers


def _checkpoint(cfg: RunConfig, explicit: Optional[Path], section: Optional[Path]) -> Path:
    return explicit or section or cfg.output_dir / "checkpoints" / "latest.ckpt"


def _sweep_table(title: str, rows: list[SweepRow], mode: str) -> Table:
    table = Table(title=title)
    for column in ("N", "mode", "mean return", "95% CI", "episodes"):
        table.add_column(column, justify="right")
    for row in rows:
        table.add_row(str(row.n_agents), mode, f"{row.mean:.4f}", f"± {row.ci:.4f}", str(row.episodes))
    return table


@app.command()
def train(
    config: Path = CONFIG_ARG,
    seed: Optional[int] = typer.Option(None, help="Override the config seed."),
    workers: Optional[int] = typer.Option(None, "--workers", "-w", min=1, help="Rollout threads."),
) -> None:
    """Train a policy on the finite system; writes metrics.csv, checkpoints and resolved.conf."""
    with _exit_codes():
        cfg, env, n_workers = _load(config, seed=seed, workers=workers)
        out = cfg.output_dir
        (out / "resolved.conf").write_text(cfg.snapshot(), encoding="utf-8")
        print_json(data=cfg.model_dump(mode="json", by_alias=True))
        metrics_path = out / "metrics.csv"
        metrics_path.unlink(missing_ok=True)

        trainer = Trainer(env, cfg.train, seed=cfg.seed, workers=n_workers, checkpoint_dir=out / "checkpoints")
        typer.echo(
            f"Training {cfg.train.algo.value} on {env.spec.env_id} for {trainer.n_iterations} iteration(s) "
            f"with N={cfg.train.n_agents}"
        )
        try:
            for metrics in trainer.run():
                append_metrics(metrics_path, metrics)
                typer.echo(
                    f"[{metrics.iteration}/{trainer.n_iterations}] steps={metrics.env_steps} "
                    f"return={metrics.mean_return:.4f} ± {metrics.ci:.4f} kl={metrics.kl:.4g}"
                )
        except KeyboardInterrupt as exc:
            path = trainer.save("interrupted.ckpt")
            typer.secho(f"Interrupted; parameters saved to {path}", fg=typer.colors.YELLOW, err=True)
            raise typer.Exit(code=1) from exc
    typer.secho(f"Done. Checkpoints in {out / 'checkpoints'}", fg=typer.colors.GREEN)


@app.command(name="eval")
def evaluate(
    config: Path = CONFIG_ARG,
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", "-c", help="Checkpoint to evaluate."),
    n_agents: Optional[int] = typer.Option(None, "--n-agents", "-n", min=1),
    episodes: Optional[int] = typer.Option(None, min=2),
    mode: Optional[ExecutionMode] = typer.Option(None, help="centralized or decentralized execution."),
    deterministic: Optional[bool] = typer.Option(None, help="Use head modes instead of samples."),
    dump: Optional[Path] = typer.Option(None, help="Also write one batch of the evaluation as a trajectory dump."),
    seed: Optional[int] = typer.Option(None),
    workers: Optional[int] = typer.Option(None, "--workers", "-w", min=1),
) -> None:
    """Mean episode return of a checkpoint at one N."""
    with _exit_codes():
        cfg, env, n_workers = _load(
            config,
            seed=seed,
            workers=workers,
            **{
                "eval.n_agents": n_agents,
                "eval.episodes": episodes,
                "eval.mode": mode,
                "eval.deterministic": deterministic,
            },
        )
        ev = cfg.eval
        controller, checkpoint_id = resolve_controller(env, _checkpoint(cfg, checkpoint, ev.checkpoint))
        estimate = evaluate_return(
            env, controller, ev.n_agents, ev.episodes, ev.mode,
            seed=cfg.seed, deterministic=ev.deterministic, workers=n_workers,
        )
        row = SweepRow(n_agents=ev.n_agents, mean=estimate.mean, ci=estimate.ci, episodes=ev.episodes)
        result = SweepResult(env.spec.env_id, checkpoint_id, ev.mode, ev.n_agents, cfg.seed, [row])
        write_table(cfg.output_dir / "eval.csv", result.csv_rows(), TRANSFER_FIELDS)
        if dump is not None:
            rollout(
                env, controller, ev.n_agents, env.spec.episode_len, ev.mode,
                seed=cfg.seed, deterministic=ev.deterministic, workers=n_workers, dump_path=dump,
            )
    console.print(_sweep_table(f"{env.spec.env_id} evaluation", [row], ev.mode.value))


@app.command()
def transfer(
    config: Path = CONFIG_ARG,
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", "-c"),
    ns: Optional[str] = typer.Option(None, help="Comma-separated population sizes, e.g. 2,5,10,20,50."),
    mode: Optional[ExecutionMode] = typer.Option(None),
    episodes: Optional[int] = typer.Option(None, min=2),
    seed: Optional[int] = typer.Option(None),
    workers: Optional[int] = typer.Option(None, "--workers", "-w", min=1),
) -> None:
    """Transfer a checkpoint across population sizes and compare with the reference N."""
    with _exit_codes():
        cfg, env, n_workers = _load(
            config,
            seed=seed,
            workers=workers,
            **{"eval.ns": _parse_ns(ns), "eval.mode": mode, "eval.episodes": episodes},
        )
        ev = cfg.eval
        result = transfer_sweep(
            env,
            _checkpoint(cfg, checkpoint, ev.checkpoint),
            ev.ns,
            ev.mode,
            MIN_EPISODES if ev.fast else ev.episodes,
            seed=cfg.seed,
            reference_n=ev.reference_n,
            deterministic=ev.deterministic,
            workers=n_workers,
        )
        write_table(cfg.output_dir / "transfer.csv", result.csv_rows(), TRANSFER_FIELDS)
    console.print(_sweep_table(f"{env.spec.env_id} transfer (reference N={result.reference_n})", result.rows, ev.mode.value))
    typer.echo(f"Spearman rho of |J^N - J^ref| vs N: {transfer_trend(result):.3f}")


@app.command()
def chaos(
    config: Path = CONFIG_ARG,
    ns: Optional[str] = typer.Option(None, help="Comma-separated population sizes."),
    draws: Optional[int] = typer.Option(None, min=1),
    seed: Optional[int] = typer.Option(None),
) -> None:
    """Fit the rate at which one step of N agents approaches the exact mean-field step."""
    with _exit_codes():
        cfg, env, _ = _load(config, seed=seed, **{"chaos.ns": _parse_ns(ns), "chaos.draws": draws})
        if not isinstance(env, FiniteMinorModel):
            raise ConfigParseError(f"Environment '{env.spec.env_id}' has no finite state space; use beach or toy3")
        gen = np.random.default_rng(cfg.seed)
        rule = random_rule(env.n_states, env.n_actions, gen)
        fit = lln_rate_fit(env, rule, cfg.chaos.ns, cfg.chaos.draws, seed=cfg.seed)
        write_table(cfg.output_dir / "rate.csv", fit.csv_rows(), RATE_FIELDS)

    table = Table(title=f"{fit.env_id} one-step mean-field gap")
    table.add_column("N", justify="right")
    table.add_column("mean L1 gap", justify="right")
    for n, gap in zip(fit.ns, fit.mean_gaps):
        table.add_row(str(n), f"{gap:.6g}")
    console.print(table)
    if fit.degenerate:
        typer.secho("Fit is degenerate (a mean gap is zero)", fg=typer.colors.YELLOW)
    else:
        typer.echo(f"log-log slope: {fit.slope:.3f}")


@app.command()
def pgcheck(
    config: Path = CONFIG_ARG,
    checkpoint: Optional[Path] = typer.Option(
        None, "--checkpoint", "-c", help="Parameters to differentiate at; a seeded initialisation when omitted."
    ),
    ns: Optional[str] = typer.Option(None),
    seed: Optional[int] = typer.Option(None),
    workers: Optional[int] = typer.Option(None, "--workers", "-w", min=1),
) -> None:
    """Cosine similarity of finite-N policy gradients against a large-N reference."""
    with _exit_codes():
        cfg, env, n_workers = _load(config, seed=seed, workers=workers, **{"pg.ns": _parse_ns(ns)})
        pg = cfg.pg
        source = checkpoint or pg.checkpoint
        params: PolicyParams
        if source is not None:
            params, _ = load_checkpoint(source, env_id=env.spec.env_id)
        else:
            params = init_params(env, np.random.default_rng(cfg.seed), hidden=cfg.train.hidden)
        result = pg_consistency(
            env,
            params,
            pg.ns,
            pg.ref_n,
            [cfg.seed + k for k in range(pg.seeds)],
            episodes=pg.episodes,
            ref_episodes=pg.ref_episodes,
            ref_seed=cfg.seed + pg.seeds,
            gamma=cfg.train.gamma,
            workers=n_workers,
        )
        write_table(cfg.output_dir / "pg.csv", result.csv_rows(), PG_FIELDS)

    table = Table(title=f"{result.env_id} gradient consistency (reference N={result.reference_n})")
    table.add_column("N", justify="right")
    table.add_column("mean cosine similarity", justify="right")
    for n, sim in zip(result.ns, result.cos_sim):
        table.add_row(str(n), f"{sim:.4f}")
    console.print(table)


@app.command()
def dpp(
    config: Path = CONFIG_ARG,
    resolution: Optional[int] = typer.Option(None, "--resolution", "-k", min=1, help="Simplex grid resolution K."),
    simulate: bool = typer.Option(False, help="Cross-check V* with the greedy policy in the finite system."),
    seed: Optional[int] = typer.Option(None),
) -> None:
    """Value iteration over (major state, mean field); writes dpp_values.csv."""
    with _exit_codes():
        cfg, env, _ = _load(config, seed=seed, **{"dpp.resolution": resolution})
        if not hasattr(env, "major_transition"):
            raise ConfigParseError(f"Environment '{env.spec.env_id}' has no exact finite model; use toy3")
        d = cfg.dpp
        grid = SimplexGrid(env.n_states, d.resolution)  # type: ignore[attr-defined]
        table = value_iteration(env, grid, d.gamma, d.tol, max_mesh=d.max_mesh)  # type: ignore[arg-type]
        path = export_value_table(table, cfg.output_dir / "dpp_values.csv")
        typer.echo(f"{len(table.residuals)} sweeps, final residual {table.residuals[-1]:.3e}; values in {path}")

        if simulate:
            n_states = env.n_states  # type: ignore[attr-defined]
            node = int(grid.nearest(np.full(n_states, 1.0 / n_states))[0])
            start = grid.nodes[node]
            policy = greedy_policy(table, env)  # type: ignore[arg-type]
            estimate = simulate_discounted(
                env,
                GreedyController(env, policy),  # type: ignore[arg-type]
                env,  # type: ignore[arg-type]
                0,
                FiniteMF(probs=start),
                d.n_agents,
                gamma=d.gamma,
                steps=d.steps,
                episodes=d.episodes,
                seed=cfg.seed,
            )
            v_star = float(table.values[0, node])
            typer.echo(
                f"V* at {np.round(start, 4).tolist()}: {v_star:.6f}; "
                f"greedy policy at N={d.n_agents}: {estimate.mean:.6f} ± {estimate.ci:.6f}"
            )


@app.command()
def replay(
    dump: Path = typer.Argument(..., exists=True, dir_okay=False, readable=True, help="Trajectory dump."),
    config: Optional[Path] = typer.Option(None, "--config", exists=True, dir_okay=False, help="Run config of the dump."),
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", "-c", help="Policy that produced the dump."),
) -> None:
    """Summarise a trajectory dump; with config and checkpoint, re-simulate and compare rewards."""
    with _exit_codes():
        data = read_dump(dump)
        header = data.header
        print_json(data=header.model_dump(mode="json"))
        typer.echo(
            f"{len(data.rewards)} steps, {int(data.dones.sum())} complete episode(s), "
            f"reward sum {data.rewards.sum():.6f}"
        )
        if config is None or checkpoint is None:
            return
        cfg = load_run_config(config)
        env = cfg.make_env()
        if env.spec.env_id != header.env_id:
            raise ConfigParseError(f"Dump was recorded on '{header.env_id}', config selects '{env.spec.env_id}'")
        controller, _ = resolve_controller(env, checkpoint)
        batch = rollout(
            env,
            controller,
            header.n_agents,
            header.steps,
            header.mode,
            seed=header.seed,
            episode_offset=header.episode_offset,
            deterministic=header.deterministic,
        )
        deviation = float(np.max(np.abs(batch.rewards - data.rewards))) if len(batch) else 0.0
    color = typer.colors.GREEN if deviation == 0.0 else typer.colors.YELLOW
    typer.secho(f"Max reward deviation after re-simulation: {deviation:.3e}", fg=color)


def main() -> None:
    """Entry point for the CLI."""
    app()


if __name__ == "__main__":
    main()
