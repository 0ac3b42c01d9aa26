"""
glrdenoise - Point cloud denoising by graph Laplacian regularization of the patch manifold
"""

from .core import DenoiseConfig, DenoiseReport, IterationRecord, Patch, PointCloud
from .evaluation import MetricsResult, add_gaussian_noise, evaluate, mcd, mse, snr
from .solver import denoise

__version__ = "0.1.0"

__all__ = [
    "DenoiseConfig",
    "DenoiseReport",
    "IterationRecord",
    "MetricsResult",
    "Patch",
    "PointCloud",
    "add_gaussian_noise",
    "denoise",
    "evaluate",
    "mcd",
    "mse",
    "snr",
]
