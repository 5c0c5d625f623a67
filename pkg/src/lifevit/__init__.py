"""Vision transformer on a small NumPy autograd core, with LIFE Q/K/V generators."""

from .config import ModelConfig, deit_tiny, desk_tiny
from .model import VisionTransformer
from .tensor import Tensor, no_grad

__all__ = ["ModelConfig", "Tensor", "VisionTransformer", "deit_tiny", "desk_tiny", "no_grad"]
__version__ = "0.1.0"
