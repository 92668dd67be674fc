"""Sequential recommendation with gated fusion of frozen multi-layer
content features and trainable ID embeddings."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
