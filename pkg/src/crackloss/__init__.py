"""Adaptive cost-sensitive losses for extremely imbalanced pixel
classification, with a small trainable segmentation network, ODS/OIS
evaluation, and a convergence-speedup benchmark harness."""

from .errors import ConfigError, NumericalError, PgmParseError
from .loss import BatchStats, HolisticConfig, LossOutput, WeightSpec
from .metrics import ConfusionCounts, EvalReport
from .model import UNet, UNetConfig

__version__ = "0.1.0"

__all__ = [
    "BatchStats",
    "ConfigError",
    "ConfusionCounts",
    "EvalReport",
    "HolisticConfig",
    "LossOutput",
    "NumericalError",
    "PgmParseError",
    "UNet",
    "UNetConfig",
    "WeightSpec",
    "__version__",
]
