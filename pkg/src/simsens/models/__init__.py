"""Concrete sensitivity models."""

from .base import FitResult, SensitivityModel
from .longitudinal import LongitudinalModel, PanelDataset
from .mean import MeanModel, UnivariateIncomplete
from .meta import CopasModel, MetaDataset
from .regression import RegressionDataset, RegressionModel

__all__ = [
    "CopasModel",
    "FitResult",
    "LongitudinalModel",
    "MeanModel",
    "MetaDataset",
    "PanelDataset",
    "RegressionDataset",
    "RegressionModel",
    "SensitivityModel",
    "UnivariateIncomplete",
]
