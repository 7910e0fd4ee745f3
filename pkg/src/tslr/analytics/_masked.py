"""Dense day-aligned arrays for cohorts with per-subject observed days."""

from __future__ import annotations

import numpy as np

from ..core import CoefficientSet, SeriesMatrix


def align_coefficients(coeffs, components=None, days=None):
    """Stack coefficient sets on a shared day axis.

    Returns ``(days, X, M)`` with ``X`` of shape ``(N, D, p)`` (zeros where
    unobserved) and boolean mask ``M`` of shape ``(N, D)``.
    """
    coeffs = list(coeffs)
    if days is None:
        days = np.unique(np.concatenate([c.days for c in coeffs])) if coeffs else np.zeros(0, int)
    cols = slice(None) if components is None else list(components)
    p = coeffs[0].values[:, cols].shape[1] if coeffs else 0
    X = np.zeros((len(coeffs), days.size, p))
    M = np.zeros((len(coeffs), days.size), dtype=bool)
    for n, c in enumerate(coeffs):
        pos = np.searchsorted(days, c.days)
        ok = (pos < days.size) & (days[np.minimum(pos, days.size - 1)] == c.days)
        X[n, pos[ok]] = c.values[ok][:, cols]
        M[n, pos[ok]] = True
    return days, X, M


def align_series(series, days=None):
    """Stack SeriesMatrix rows on a shared day axis; see :func:`align_coefficients`."""
    series = list(series)
    if days is None:
        days = np.unique(np.concatenate([s.days for s in series])) if series else np.zeros(0, int)
    ell = series[0].row_len if series else 0
    X = np.zeros((len(series), days.size, ell))
    M = np.zeros((len(series), days.size), dtype=bool)
    for n, s in enumerate(series):
        sd = s.days
        pos = np.searchsorted(days, sd)
        ok = (pos < days.size) & (days[np.minimum(pos, days.size - 1)] == sd)
        X[n, pos[ok]] = s.observed_values[ok]
        M[n, pos[ok]] = True
    return days, X, M


def masked_sq_distances(X, M, x, m):
    """Squared intersection-normalized distances from every row of X to x.

    ``d2[n] = sum_{t in M[n] & m} ||X[n, t] - x[t]||^2 / |M[n] & m|``;
    ``inf`` where the intersection is empty.
    """
    common = M & m[None, :]
    diff = X - x[None, :, :]
    sq = np.einsum("ndp,ndp->nd", diff, diff)
    total = np.where(common, sq, 0.0).sum(axis=1)
    count = common.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.inf)


def to_coefficient_set(subject_id, days, values, mask) -> CoefficientSet:
    return CoefficientSet(subject_id, days[mask], values[mask])


def to_series(subject_id, days, values, mask, num_rows) -> SeriesMatrix:
    out = np.full((num_rows, values.shape[1]), np.nan)
    keep = mask & (days <= num_rows)
    out[days[keep] - 1] = values[keep]
    return SeriesMatrix(subject_id, out)
