"""Sparse-view indoor surface reconstruction with a neural SDF and inter-image matching priors."""

from .errors import InputError, NumericalError, ReconstructionError
from .field import FieldConfig, SdfField
from .train import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "FieldConfig",
    "InputError",
    "NumericalError",
    "ReconstructionError",
    "SdfField",
    "TrainConfig",
    "__version__",
]
