"""Cohort order statistics, the masked coefficient metric and outliers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import CoefficientSet, FactorModel
from ..errors import NoOverlap
from ._masked import align_coefficients

__all__ = [
    "PERCENTILES",
    "TrendStats",
    "OutlierReport",
    "trend_stats",
    "median_coefficients",
    "component_median",
    "masked_distance",
    "default_components",
    "detect_outliers",
]

PERCENTILES = (10.0, 25.0, 50.0, 75.0, 90.0)
DEFAULT_OUTLIER_PERCENTILE = 98.0


@dataclass(frozen=True, eq=False)
class TrendStats:
    """``values[q, k, j]``: percentile ``percentiles[q]`` of component j on ``days[k]``."""

    days: np.ndarray
    percentiles: tuple[float, ...]
    values: np.ndarray
    counts: np.ndarray

    def component(self, j: int) -> np.ndarray:
        return self.values[:, :, j]


def trend_stats(m: FactorModel, percentiles=PERCENTILES) -> TrendStats:
    """Per-day percentiles of every component over the subjects observed that day.

    Percentiles interpolate linearly between order statistics.
    """
    days, X, M = align_coefficients(m.coeffs)
    data = np.where(M[:, :, None], X, np.nan)
    vals = np.nanpercentile(data, list(percentiles), axis=0, method="linear")
    return TrendStats(days, tuple(percentiles), vals, M.sum(axis=0))


def median_coefficients(m: FactorModel) -> CoefficientSet:
    """Per-day cohort median of all components, as a pseudo-subject."""
    stats = trend_stats(m, percentiles=(50.0,))
    return CoefficientSet("median", stats.days, stats.values[0])


def component_median(m: FactorModel, j: int) -> tuple[np.ndarray, np.ndarray]:
    """``(days, median)`` trajectory of component j."""
    med = median_coefficients(m)
    return med.days, med.values[:, j]


def default_components(rank: int) -> tuple[int, ...]:
    """The first three components (or all, if fewer)."""
    return tuple(range(min(3, rank)))


def masked_distance(a: CoefficientSet, b: CoefficientSet, components=None) -> float:
    """Root-mean squared coefficient difference over the shared days.

    ``sqrt(sum_{j in components} sum_{t in common} (a_j(t) - b_j(t))^2 / |common|)``.
    Normalizing by the number of shared days (not by the number of
    components) keeps the distance comparable between pairs with different
    amounts of missing data.
    """
    comps = list(default_components(min(a.rank, b.rank)) if components is None else components)
    common, ia, ib = np.intersect1d(a.days, b.days, assume_unique=True, return_indices=True)
    if common.size == 0:
        raise NoOverlap(f"{a.subject_id} and {b.subject_id} share no observed day")
    diff = a.values[ia][:, comps] - b.values[ib][:, comps]
    return float(np.sqrt(np.sum(diff * diff) / common.size))


@dataclass(frozen=True, eq=False)
class OutlierReport:
    component: int
    subject_ids: tuple[str, ...]
    distances: np.ndarray
    percentile: float
    threshold: float
    flagged: tuple[str, ...]


def detect_outliers(m: FactorModel, j: int, percentile: float = DEFAULT_OUTLIER_PERCENTILE) -> OutlierReport:
    """Distance of every subject's component-j trajectory to the cohort median.

    Subjects strictly above the given percentile of the distance
    distribution are flagged.
    """
    if not 0.0 < percentile < 100.0:
        raise ValueError("percentile must lie in (0, 100)")
    if not 0 <= j < m.rank:
        raise ValueError(f"component {j} out of range for rank {m.rank}")
    med = median_coefficients(m)
    dist = np.array([masked_distance(c, med, [j]) for c in m.coeffs])
    threshold = float(np.percentile(dist, percentile))
    flagged = tuple(c.subject_id for c, dv in zip(m.coeffs, dist) if dv > threshold)
    return OutlierReport(j, tuple(m.subject_ids), dist, float(percentile), threshold, flagged)
