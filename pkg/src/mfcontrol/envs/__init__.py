"""Benchmark environments."""

from .base import ActionSpace, EnvSpec, Environment, FiniteMinorModel, SystemState
from .beach import BeachEnv
from .factory import EnvName, EnvParams, create_env
from .foraging import ForagingEnv
from .formation import FormationEnv
from .potential import PotentialEnv
from .streams import EpisodeStreams
from .toy import CyclicToyEnv
from .two_gaussians import TwoGaussiansEnv

__all__ = [
    "ActionSpace",
    "BeachEnv",
    "CyclicToyEnv",
    "EnvName",
    "EnvParams",
    "EnvSpec",
    "Environment",
    "EpisodeStreams",
    "FiniteMinorModel",
    "ForagingEnv",
    "FormationEnv",
    "PotentialEnv",
    "SystemState",
    "TwoGaussiansEnv",
    "create_env",
]
