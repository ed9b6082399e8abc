"""Identity-aware facial attribute transfer at desk scale."""

from .kernels import BACKEND_NAME

__version__ = "0.1.0"
