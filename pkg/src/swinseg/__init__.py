"""swinseg: windowed-attention U-shaped segmentation with a from-scratch
autodiff tensor core."""

from .config import ModelConfig, SgdConfig, base_config, tiny_config, toy_config
from .model import SwinUnet, parameter_count
from .tensor import Tensor, backward, grad_check, no_grad

__all__ = [
    "ModelConfig",
    "SgdConfig",
    "SwinUnet",
    "Tensor",
    "backward",
    "base_config",
    "grad_check",
    "no_grad",
    "parameter_count",
    "tiny_config",
    "toy_config",
]

__version__ = "0.1.0"
