"""Data containers shared by every module.

Conventions
-----------
* Rows of a :class:`SeriesMatrix` are periods (days). Day numbers are
  1-based: row ``k`` of ``values`` is day ``k + 1``.
* Unobserved rows are stored as NaN. A row is either fully observed or
  fully missing.
* Components are 0-based in the Python API (``F1`` in files is component 0).
* A :class:`BasisSet` stores its functions as the rows of an ``(r, ell)``
  array, so the reconstruction of a subject is ``coeffs.values @ basis.functions``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyDataset, EmptySeries, InvalidPeriod, ShapeMismatch

BASIS_NORM_TOL = 1e-9


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SeriesMatrix:
    """One subject's period-aligned data matrix.

    Parameters
    ----------
    subject_id : str
    values : (T, ell) array_like
        Fractions in [0, 1]; unobserved rows are NaN.
    intervals : (K, 2) array_like, optional
        Sanitized sleep intervals in minutes since the subject epoch, when the
        matrix was rasterized from an event log. Used by the plausibility
        filters, which measure runs on intervals rather than on the grid.
    sample_minutes : float, optional
        Real-time length of one sample, if known.
    """

    subject_id: str
    values: np.ndarray
    intervals: np.ndarray | None = None
    sample_minutes: float | None = None

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim != 2:
            raise ShapeMismatch(f"{self.subject_id}: values must be 2-D, got shape {vals.shape}")
        if vals.shape[1] < 2:
            raise InvalidPeriod(f"{self.subject_id}: row length must be >= 2, got {vals.shape[1]}")
        nan_rows = np.isnan(vals)
        partial = nan_rows.any(axis=1) & ~nan_rows.all(axis=1)
        if partial.any():
            raise ShapeMismatch(f"{self.subject_id}: rows {np.flatnonzero(partial) + 1} are partially missing")
        obs = vals[~nan_rows.any(axis=1)]
        if obs.size == 0:
            raise EmptySeries(f"{self.subject_id}: no observed rows")
        if obs.min() < 0.0 or obs.max() > 1.0:
            raise ValueError(f"{self.subject_id}: observed values must lie in [0, 1]")
        object.__setattr__(self, "values", vals)
        if self.intervals is not None:
            object.__setattr__(self, "intervals", _frozen(np.reshape(self.intervals, (-1, 2))))

    @property
    def num_rows(self) -> int:
        return self.values.shape[0]

    @property
    def row_len(self) -> int:
        return self.values.shape[1]

    @property
    def mask(self) -> np.ndarray:
        """Boolean observed-row mask of length T."""
        return ~np.isnan(self.values[:, 0])

    @property
    def observed(self) -> np.ndarray:
        """0-based indices of observed rows, increasing."""
        return np.flatnonzero(self.mask)

    @property
    def days(self) -> np.ndarray:
        """1-based day numbers of observed rows."""
        return self.observed + 1

    @property
    def observed_values(self) -> np.ndarray:
        return self.values[self.mask]

    def with_mask(self, keep: np.ndarray) -> "SeriesMatrix":
        """Copy with every row outside ``keep`` marked unobserved."""
        vals = np.array(self.values)
        vals[~np.asarray(keep, dtype=bool)] = np.nan
        return SeriesMatrix(self.subject_id, vals, self.intervals, self.sample_minutes)

    def window(self, start: int, stop: int) -> "SeriesMatrix":
        """Restrict to days ``start <= day < stop``, keeping day numbering.

        Rows before ``start`` become unobserved; rows from ``stop`` on are cut.
        Raises EmptySeries if no observed day falls in the window.
        """
        if stop <= start or start < 1:
            raise ValueError(f"invalid window [{start}, {stop})")
        vals = np.full((stop - 1, self.row_len), np.nan)
        n = min(stop - 1, self.num_rows)
        vals[:n] = self.values[:n]
        vals[: start - 1] = np.nan
        return SeriesMatrix(self.subject_id, vals, None, self.sample_minutes)

    def observed_fraction(self, start: int | None = None, stop: int | None = None) -> float:
        start = 1 if start is None else start
        stop = self.num_rows + 1 if stop is None else stop
        days = self.days
        return float(np.count_nonzero((days >= start) & (days < stop))) / (stop - start)


@dataclass(frozen=True, eq=False)
class Dataset:
    """A cohort of series sharing the same row length."""

    series: tuple[SeriesMatrix, ...]
    period_minutes: float = 1440.0
    sample_minutes: float | None = None

    def __post_init__(self):
        series = tuple(self.series)
        object.__setattr__(self, "series", series)
        if not series:
            return
        ells = {s.row_len for s in series}
        if len(ells) != 1:
            raise ShapeMismatch(f"series have different row lengths: {sorted(ells)}")
        ids = [s.subject_id for s in series]
        if len(set(ids)) != len(ids):
            raise ValueError("subject ids must be unique")

    def __len__(self):
        return len(self.series)

    def __iter__(self):
        return iter(self.series)

    def __getitem__(self, i):
        return self.series[i]

    @property
    def row_len(self) -> int:
        if not self.series:
            raise EmptyDataset("dataset has no series")
        return self.series[0].row_len

    @property
    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.series]

    def stacked(self) -> np.ndarray:
        """All observed rows of all subjects, stacked in subject order."""
        if not self.series:
            raise EmptyDataset("dataset has no series")
        return np.vstack([s.observed_values for s in self.series])

    def replace(self, series: Sequence[SeriesMatrix]) -> "Dataset":
        return Dataset(tuple(series), self.period_minutes, self.sample_minutes)


@dataclass(frozen=True, eq=False)
class BasisSet:
    """r nonnegative unit-norm basis functions stored as rows."""

    functions: np.ndarray

    def __post_init__(self):
        f = _frozen(np.atleast_2d(self.functions))
        if (f < 0).any():
            raise ValueError("basis functions must be nonnegative")
        norms = np.linalg.norm(f, axis=1)
        if np.any(np.abs(norms - 1.0) > BASIS_NORM_TOL):
            raise ValueError(f"basis functions must have unit norm, got {norms}")
        object.__setattr__(self, "functions", f)

    @property
    def rank(self) -> int:
        return self.functions.shape[0]

    @property
    def row_len(self) -> int:
        return self.functions.shape[1]

    @classmethod
    def normalized(cls, functions) -> "BasisSet":
        f = np.maximum(np.asarray(functions, dtype=float), 0.0)
        return cls(f / np.linalg.norm(f, axis=1, keepdims=True))


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Coefficient trajectories of one subject over its observed days.

    ``values[k, j]`` is the weight of component j on day ``days[k]``.
    """

    subject_id: str
    days: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        days = _frozen(self.days, dtype=np.int64)
        vals = _frozen(self.values)
        if vals.ndim == 1:
            vals = _frozen(vals.reshape(-1, 1))
        if days.ndim != 1 or vals.shape[0] != days.shape[0]:
            raise ShapeMismatch(
                f"{self.subject_id}: {days.shape[0]} days but {vals.shape[0]} coefficient rows"
            )
        if days.size > 1 and np.any(np.diff(days) <= 0):
            raise ValueError(f"{self.subject_id}: days must be strictly increasing")
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "values", vals)

    @property
    def rank(self) -> int:
        return self.values.shape[1]

    def window(self, start: int, stop: int) -> "CoefficientSet":
        keep = (self.days >= start) & (self.days < stop)
        return CoefficientSet(self.subject_id, self.days[keep], self.values[keep])

    def reconstruct(self, basis: BasisSet, num_rows: int | None = None) -> SeriesMatrix:
        """Low-rank reconstruction as a SeriesMatrix (clipped to [0, 1])."""
        T = int(self.days.max()) if num_rows is None else num_rows
        vals = np.full((T, basis.row_len), np.nan)
        keep = self.days <= T
        vals[self.days[keep] - 1] = np.clip(self.values[keep] @ basis.functions, 0.0, 1.0)
        return SeriesMatrix(self.subject_id, vals)


@dataclass(frozen=True, eq=False)
class FactorModel:
    """A fitted model: shared basis, per-subject coefficients and fit metadata."""

    basis: BasisSet
    coeffs: tuple[CoefficientSet, ...]
    lam: float
    objective_trace: tuple[float, ...] = ()
    converged: bool = False
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(self.coeffs))
        object.__setattr__(self, "objective_trace", tuple(float(v) for v in self.objective_trace))
        for c in self.coeffs:
            if c.rank != self.basis.rank:
                raise ShapeMismatch(f"{c.subject_id}: rank {c.rank} != basis rank {self.basis.rank}")

    @property
    def rank(self) -> int:
        return self.basis.rank

    @property
    def subject_ids(self) -> list[str]:
        return [c.subject_id for c in self.coeffs]

    @property
    def iterations(self) -> int:
        return max(len(self.objective_trace) - 1, 0)

    def coefficients_for(self, subject_id: str) -> CoefficientSet:
        for c in self.coeffs:
            if c.subject_id == subject_id:
                return c
        raise KeyError(subject_id)
