"""Run configuration: config file values, ``M3FC_*`` environment overrides and defaults."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from .algo import TrainConfig
from .envs.base import Environment
from .envs.factory import EnvName, EnvParams, create_env
from .parser import format_config, read_config_file
from .policy import ExecutionMode


class EnvSection(EnvParams):
    """``env.id`` selects the environment; ``env.<name>.*`` hold its constants."""

    id: EnvName = Field(..., description="Environment id: 2g, formation, beach, foraging, potential or toy3.")


class GridSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cells_per_dim: int | None = Field(None, ge=1, description="Histogram cells per axis (continuous envs).")


class EvalSection(BaseModel):
    """Finite-N evaluation and transfer sweeps."""

    model_config = ConfigDict(extra="forbid")

    checkpoint: Path | None = Field(None, description="Defaults to <output_dir>/checkpoints/latest.ckpt.")
    episodes: int = Field(100, ge=2)
    n_agents: int = Field(300, ge=1)
    ns: tuple[int, ...] = (2, 5, 10, 20, 50)
    reference_n: int = Field(500, ge=1)
    mode: ExecutionMode = ExecutionMode.CENTRALIZED
    deterministic: bool = False
    fast: bool = Field(False, description="Cut episode counts to the sweep minimum.")


class ChaosSection(BaseModel):
    """One-step law-of-large-numbers rate fit."""

    model_config = ConfigDict(extra="forbid")

    ns: tuple[int, ...] = (10, 100, 1000, 10000)
    draws: int = Field(200, ge=1)


class PgSection(BaseModel):
    """Policy-gradient consistency check."""

    model_config = ConfigDict(extra="forbid")

    checkpoint: Path | None = None
    ns: tuple[int, ...] = (5, 20, 100)
    ref_n: int = Field(500, ge=1)
    seeds: int = Field(20, ge=1)
    episodes: int = Field(10, ge=1)
    ref_episodes: int = Field(100, ge=1)


class DppSection(BaseModel):
    """Value iteration on the simplex grid and its finite-N cross-check."""

    model_config = ConfigDict(extra="forbid")

    resolution: int = Field(20, ge=1, description="Simplex grid resolution K.")
    gamma: float = Field(0.99, gt=0, lt=1)
    tol: float = Field(1e-8, gt=0)
    max_mesh: int = Field(5_000_000, ge=1)
    n_agents: int = Field(10_000, ge=1)
    episodes: int = Field(200, ge=2)
    horizon_tol: float = Field(1e-6, gt=0, lt=1, description="Simulate until gamma**steps drops below this.")

    @property
    def steps(self) -> int:
        return math.ceil(math.log(self.horizon_tol) / math.log(self.gamma))


class RunConfig(BaseSettings):
    """Everything a command needs; unknown keys are rejected."""

    env: EnvSection
    seed: int = Field(0, description="Root seed for every random stream.")
    output_dir: Path = Field(Path("runs"), description="Directory for checkpoints, metrics and sweep data.")
    workers: int | None = Field(None, ge=1, description="Rollout threads; logical cores - 1 when unset.")
    train: TrainConfig = Field(default_factory=TrainConfig)
    grid: GridSection = Field(default_factory=GridSection)
    eval: EvalSection = Field(default_factory=EvalSection)
    chaos: ChaosSection = Field(default_factory=ChaosSection)
    pg: PgSection = Field(default_factory=PgSection)
    dpp: DppSection = Field(default_factory=DppSection)

    model_config = SettingsConfigDict(env_prefix="M3FC_", extra="forbid")

    @field_validator("output_dir")
    @classmethod
    def _writable(cls, value: Path) -> Path:
        if value.exists() and not value.is_dir():
            raise ValueError(f"Output path '{value}' exists and is not a directory")
        return value

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        # Environment variables beat the config file, which arrives as init kwargs.
        return env_settings, init_settings

    def make_env(self) -> Environment:
        return create_env(self.env.id, self.env, cells_per_dim=self.grid.cells_per_dim)

    def snapshot(self) -> str:
        """The resolved configuration in config-file syntax."""
        return format_config(self.model_dump(mode="python", by_alias=True)) + "\n"


def load_run_config(path: Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from a config file plus command-line overrides.

    Raises:
        ConfigParseError: If the file is missing or malformed
        pydantic.ValidationError: If a value is invalid or a key is unknown
    """
    data: dict[str, Any] = read_config_file(path) if path is not None else {}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return RunConfig(**data)
