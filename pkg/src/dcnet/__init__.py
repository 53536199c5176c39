"""Saliency-guided lesion segmentation building blocks on a small NHWC autodiff core."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
