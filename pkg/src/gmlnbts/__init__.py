"""Lightweight graph-interaction multimodal 3D segmentation with a
clinician-feedback fine-tuning loop, built on an in-package tensor
library with reverse-mode autodiff."""

from .check import grad_check
from .errors import DataError, FormatError, ShapeError, SpecError
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "DataError", "FormatError", "ShapeError", "SpecError",
    "Tensor", "grad_check", "no_grad", "__version__",
]
