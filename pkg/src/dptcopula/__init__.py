"""Dirichlet-based Polya tree copula estimation."""

from .dptree import (
    DPTree,
    HyperSchedule,
    new_prior,
    posterior_mean_grid,
    sample_measure,
    sample_predictive,
    update,
)
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    DPTCopulaError,
    NumericError,
    UsageError,
)
from .grid import GridDensity
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "DataError",
    "DomainError",
    "DPTCopulaError",
    "DPTree",
    "GridDensity",
    "HyperSchedule",
    "NumericError",
    "UsageError",
    "new_prior",
    "posterior_mean_grid",
    "sample_measure",
    "sample_predictive",
    "update",
]
