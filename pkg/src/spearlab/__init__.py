"""spearlab: self-imitation policy optimisation on small tool-use MDPs.

A tabular softmax policy is trained with a clipped group-relative policy
gradient, optional self-imitation replay with median-recalibrated advantages,
curriculum-scheduled reward terms and a set of stabilising tricks
(clip-higher, dual clip, trajectory filters, covariance clipping).
"""
__version__ = "0.1.0"

from .config import TrainConfig, load_config, parse_config, dump_config
from .env import make_env, CalcChain, KeyDoor
from .errors import (
    SpearError,
    ConfigError,
    ContractViolation,
    NumericError,
    DegenerateGroupError,
    CalibrationDeclined,
)
from .policy import PolicyParams
from .trainer import Trainer, MetricsRecord

__all__ = [
    "__version__",
    "TrainConfig",
    "load_config",
    "parse_config",
    "dump_config",
    "make_env",
    "CalcChain",
    "KeyDoor",
    "SpearError",
    "ConfigError",
    "ContractViolation",
    "NumericError",
    "DegenerateGroupError",
    "CalibrationDeclined",
    "PolicyParams",
    "Trainer",
    "MetricsRecord",
]
