"""Read-only analyses of a fitted model: trends, outliers, clusters, forecasts."""

from .clustering import RAW, ClusterAssignment, kmeans
from .forecast import (
    METHODS,
    ForecastReport,
    ForecastTask,
    KRForecast,
    MethodScore,
    baselines,
    cross_validate_sigma,
    evaluate_forecast,
    fit_coefficients_fixed_basis,
    kr_forecast,
    kr_raw_forecast,
    mean_prediction,
    run_forecast,
)
from .trends import (
    PERCENTILES,
    OutlierReport,
    TrendStats,
    component_median,
    default_components,
    detect_outliers,
    masked_distance,
    median_coefficients,
    trend_stats,
)

__all__ = [
    "RAW",
    "ClusterAssignment",
    "kmeans",
    "METHODS",
    "ForecastReport",
    "ForecastTask",
    "KRForecast",
    "MethodScore",
    "baselines",
    "cross_validate_sigma",
    "evaluate_forecast",
    "fit_coefficients_fixed_basis",
    "kr_forecast",
    "kr_raw_forecast",
    "mean_prediction",
    "run_forecast",
    "PERCENTILES",
    "OutlierReport",
    "TrendStats",
    "component_median",
    "default_components",
    "detect_outliers",
    "masked_distance",
    "median_coefficients",
    "trend_stats",
]
