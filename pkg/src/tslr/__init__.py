"""Nonnegative, time-smoothed low-rank factorization of daily series with missing days."""

from .core import BasisSet, CoefficientSet, Dataset, FactorModel, SeriesMatrix
from .errors import TslrError
from .solver import FitOptions, fit

__version__ = "0.1.0"

__all__ = [
    "BasisSet",
    "CoefficientSet",
    "Dataset",
    "FactorModel",
    "SeriesMatrix",
    "TslrError",
    "FitOptions",
    "fit",
    "__version__",
]
