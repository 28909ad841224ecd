"""Major-minor mean-field control lab."""

from .algo import TrainConfig, estimate_pg, gae, train
from .envs import EnvName, create_env
from .errors import MFControlError
from .finite_sim import evaluate_return, rollout
from .mf_limit import lln_gap, mf_step, value_iteration
from .policy import ExecutionMode, NetworkPolicy
from .settings import RunConfig, load_run_config

__version__ = "0.1.0"

__all__ = [
    "EnvName",
    "ExecutionMode",
    "MFControlError",
    "NetworkPolicy",
    "RunConfig",
    "TrainConfig",
    "create_env",
    "estimate_pg",
    "evaluate_return",
    "gae",
    "lln_gap",
    "load_run_config",
    "mf_step",
    "rollout",
    "train",
    "value_iteration",
]
