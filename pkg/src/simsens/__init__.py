"""Simulation-based sensitivity analysis for non-ignorable missing data."""

from .engine import (
    SensitivityGrid,
    SimulationSensitivityAnalysis,
    SsaCell,
    SsaConfig,
    most_plausible,
    near_minimum_band,
    run_sweep,
    summarize,
)
from .exceptions import (
    FitFailure,
    InvalidArgumentError,
    InvalidDataError,
    NoPlausibleModelError,
    SimsensError,
    SimulationInfeasible,
    SweepFailedError,
)
from .knn import knn_distance, similarity
from .models import (
    CopasModel,
    LongitudinalModel,
    MeanModel,
    MetaDataset,
    PanelDataset,
    RegressionDataset,
    RegressionModel,
    UnivariateIncomplete,
)
from .permute import permutation_test

__version__ = "0.1.0"

__all__ = [
    "CopasModel",
    "FitFailure",
    "InvalidArgumentError",
    "InvalidDataError",
    "LongitudinalModel",
    "MeanModel",
    "MetaDataset",
    "NoPlausibleModelError",
    "PanelDataset",
    "RegressionDataset",
    "RegressionModel",
    "SensitivityGrid",
    "SimsensError",
    "SimulationInfeasible",
    "SimulationSensitivityAnalysis",
    "SsaCell",
    "SsaConfig",
    "SweepFailedError",
    "UnivariateIncomplete",
    "knn_distance",
    "most_plausible",
    "near_minimum_band",
    "permutation_test",
    "run_sweep",
    "similarity",
    "summarize",
]
