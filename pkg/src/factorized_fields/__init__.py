"""Factorized-field image representation: fitting, analysis and compression."""

from .grid import FieldGrid, sample_bilinear, sample_bilinear_adjoint
from .model import FactorizedField, ModelConfig, forward, init_field, parameter_count
from .optim import FitConfig, FitReport, fit, gradcheck, loss_and_grad

__version__ = "0.1.0"

__all__ = [
    "FieldGrid",
    "sample_bilinear",
    "sample_bilinear_adjoint",
    "FactorizedField",
    "ModelConfig",
    "forward",
    "init_field",
    "parameter_count",
    "FitConfig",
    "FitReport",
    "fit",
    "gradcheck",
    "loss_and_grad",
]
