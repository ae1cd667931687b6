"""Semi-supervised domain adaptation in an embedding space, on a small autodiff engine."""

from .autodiff import Tensor, backward, check_gradients, no_grad
from .config import RunConfig
from .errors import (
    AdaEmbedError,
    ConfigError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    DivergenceError,
    NumericError,
)
from .trainer import evaluate, run_ablation, run_label_sweep, train

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "check_gradients",
    "no_grad",
    "RunConfig",
    "train",
    "evaluate",
    "run_ablation",
    "run_label_sweep",
    "AdaEmbedError",
    "ConfigError",
    "ContractError",
    "DegenerateInputError",
    "DimensionError",
    "DivergenceError",
    "NumericError",
]
