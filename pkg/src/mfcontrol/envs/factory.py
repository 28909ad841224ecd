"""Factory for creating environments from an id and their parameter sections."""

from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field

from .base import Environment
from .beach import BeachEnv, BeachParams
from .foraging import ForagingEnv, ForagingParams
from .formation import FormationEnv, FormationParams
from .potential import PotentialEnv, PotentialParams
from .toy import CyclicToyEnv, ToyParams
from .two_gaussians import TwoGaussiansEnv, TwoGaussiansParams


class EnvName(str, Enum):
    """Environment selection."""

    TWO_GAUSSIANS = "2g"
    FORMATION = "formation"
    BEACH = "beach"
    FORAGING = "foraging"
    POTENTIAL = "potential"
    TOY3 = "toy3"


class EnvParams(BaseModel):
    """Parameter sections for every environment (``env.<name>.<field>`` in config files)."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    two_gaussians: TwoGaussiansParams = Field(default_factory=TwoGaussiansParams, alias="2g")
    formation: FormationParams = Field(default_factory=FormationParams)
    beach: BeachParams = Field(default_factory=BeachParams)
    foraging: ForagingParams = Field(default_factory=ForagingParams)
    potential: PotentialParams = Field(default_factory=PotentialParams)
    toy3: ToyParams = Field(default_factory=ToyParams)


def create_env(
    name: EnvName | str,
    params: EnvParams | None = None,
    *,
    cells_per_dim: int | None = None,
) -> Environment:
    """Create an environment.

    Args:
        name: Environment id (``2g``, ``formation``, ``beach``, ``foraging``, ``potential``, ``toy3``)
        params: Parameter sections; defaults when omitted
        cells_per_dim: Override of the histogram resolution for continuous environments

    Returns:
        Configured Environment instance

    Raises:
        ValueError: If the id is unknown or the override does not apply
    """
    name = EnvName(name)
    params = params or EnvParams()

    def _cells(section: BaseModel, field: str) -> BaseModel:
        if cells_per_dim is None:
            return section
        return section.model_copy(update={field: cells_per_dim})

    if name is EnvName.TWO_GAUSSIANS:
        return TwoGaussiansEnv(_cells(params.two_gaussians, "cells_per_dim"))  # type: ignore[arg-type]
    if name is EnvName.FORMATION:
        return FormationEnv(_cells(params.formation, "cells_per_dim"))  # type: ignore[arg-type]
    if name is EnvName.FORAGING:
        return ForagingEnv(_cells(params.foraging, "cells_per_dim"))  # type: ignore[arg-type]
    if name is EnvName.POTENTIAL:
        return PotentialEnv(_cells(params.potential, "cells"))  # type: ignore[arg-type]
    if cells_per_dim is not None:
        raise ValueError(f"Environment '{name.value}' has a fixed state grid; remove grid.cells_per_dim")
    if name is EnvName.BEACH:
        return BeachEnv(params.beach)
    return CyclicToyEnv(params.toy3)
