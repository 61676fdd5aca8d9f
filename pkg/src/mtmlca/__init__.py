"""Multi-task MVNN learning inside the machine-learning-powered
combinatorial auction (MLCA)."""

from .errors import CapacityError, ConfigError, ExhaustionError, TrainingError
from .metrics import efficiency, mape, wilcoxon_one_tailed
from .mlca import AuctionOutcome, MlcaConfig, run_mlca
from .mvnn import MvnnParams, forward, inject_id, new_mvnn
from .training import TrainConfig, method_config, mt_fit
from .valuemodel import InstanceConfig, generate_instance
from .wdp import maximize_model_sum, solve_reported_wdp

__version__ = "0.1.0"

__all__ = [
    "AuctionOutcome",
    "CapacityError",
    "ConfigError",
    "ExhaustionError",
    "InstanceConfig",
    "MlcaConfig",
    "MvnnParams",
    "TrainConfig",
    "TrainingError",
    "efficiency",
    "forward",
    "generate_instance",
    "inject_id",
    "mape",
    "maximize_model_sum",
    "method_config",
    "mt_fit",
    "new_mvnn",
    "run_mlca",
    "solve_reported_wdp",
    "wilcoxon_one_tailed",
]
