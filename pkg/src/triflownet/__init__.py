"""Triple-flow RGB-thermal salient object detection."""

from .config import ModelConfig, TrainingConfig, load_config, toy_config, validate_config
from .model import TripleFlowNet, build_model
from .paramstore import ParamStore, load_params, save_params

__all__ = [
    "ModelConfig",
    "TrainingConfig",
    "ParamStore",
    "TripleFlowNet",
    "build_model",
    "load_config",
    "load_params",
    "save_params",
    "toy_config",
    "validate_config",
]

__version__ = "0.1.0"
