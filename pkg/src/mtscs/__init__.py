"""Compressive sensing with multiscale tensor-summation operators."""

from .activations import ACTIVATIONS, GatedUnit, Identity, Relu, make_activation
from .config import (
    RunConfig,
    config_hash,
    dumps_config,
    load_config,
    loads_config,
    resolve_data_dir,
    save_config,
)
from .errors import (
    ConfigError,
    FormatError,
    MtscsError,
    ShapeError,
    TrainingError,
)
from .metrics import EvalReport, evaluate, psnr, ssim
from .model import CsModel, MtsBlock
from .operators import GtsOperator, MtsOperator, ScaleSpec, plan_output_windows

__version__ = "0.1.0"

__all__ = [
    "ACTIVATIONS",
    "ConfigError",
    "CsModel",
    "EvalReport",
    "FormatError",
    "GatedUnit",
    "GtsOperator",
    "Identity",
    "MtsBlock",
    "MtsOperator",
    "MtscsError",
    "Relu",
    "RunConfig",
    "ScaleSpec",
    "ShapeError",
    "TrainingError",
    "config_hash",
    "dumps_config",
    "evaluate",
    "load_config",
    "loads_config",
    "make_activation",
    "plan_output_windows",
    "psnr",
    "resolve_data_dir",
    "save_config",
    "ssim",
    "__version__",
]
