"""Dual-path entity transformers for micro-action recognition, at desk scale."""
from .model import Batch, MicroDualNet, ModelConfig, ModelOutput
from .tensor import NonFiniteError, ShapeError, Tensor

__all__ = ["Batch", "MicroDualNet", "ModelConfig", "ModelOutput", "NonFiniteError", "ShapeError", "Tensor"]
__version__ = "0.1.0"
