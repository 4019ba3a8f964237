"""Residual Matrix Transformer and a baseline transformer, with moment, resource and training tooling."""

from .memory import matrix_layernorm, outer_store, retrieve
from .models import build_model, model_config
from .rmt import RMTConfig, ResidualMatrixTransformer
from .transformer import Transformer, TransformerConfig

__all__ = [
    "RMTConfig", "ResidualMatrixTransformer", "Transformer", "TransformerConfig",
    "build_model", "matrix_layernorm", "model_config", "outer_store", "retrieve",
]
__version__ = "0.1.0"
