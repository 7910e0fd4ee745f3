"""Turning raw logs into period-aligned matrices, and plausibility filters.

Two entry points produce a :class:`~tslr.core.SeriesMatrix`:

* :func:`reshape_series` for generic sampled series, one row per period;
* :func:`rasterize_events` for sleep logs, giving the fraction of each
  sample window spent asleep.

Times in event logs are minutes since the subject's epoch (birth); day ``t``
covers minutes ``[(t-1) * 1440, t * 1440)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterable, Mapping

import numpy as np

from .core import Dataset, SeriesMatrix
from .errors import ConfigError, EmptySeries, InvalidPeriod, MalformedLog

__all__ = [
    "EventLog",
    "FilterRules",
    "sanitize_events",
    "reshape_series",
    "flatten_series",
    "rasterize_events",
    "filter_implausible_days",
    "filter_sparse_subjects",
    "ingest_logs",
]

DAY_MINUTES = 1440
START, END = "start", "end"


@dataclass(frozen=True)
class EventLog:
    """Reported sleep starts and ends of one subject, in time order."""

    subject_id: str
    events: tuple[tuple[float, str], ...]

    def __post_init__(self):
        events = tuple((float(t), str(k)) for t, k in self.events)
        for t, k in events:
            if k not in (START, END):
                raise MalformedLog(f"{self.subject_id}: unknown event kind {k!r}")
            if not math.isfinite(t) or t < 0:
                raise MalformedLog(f"{self.subject_id}: invalid timestamp {t}")
        times = [t for t, _ in events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise MalformedLog(f"{self.subject_id}: timestamps must be strictly increasing")
        object.__setattr__(self, "events", events)


@dataclass(frozen=True)
class FilterRules:
    max_sleep_hours: float = 16.0
    max_awake_hours: float = 20.0
    # clock hours; start > end means the window wraps past midnight
    night_start_hour: float = 21.0
    night_end_hour: float = 7.0
    isolation_gap_days: int = 5
    max_missing_fraction: float = 0.9

    def __post_init__(self):
        for name in ("max_sleep_hours", "max_awake_hours", "isolation_gap_days"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.max_missing_fraction <= 1.0:
            raise ConfigError("max_missing_fraction must lie in [0, 1]")
        for name in ("night_start_hour", "night_end_hour"):
            if not 0.0 <= getattr(self, name) <= 24.0:
                raise ConfigError(f"{name} must be a clock hour in [0, 24]")
        if self.night_start_hour % 24 == self.night_end_hour % 24:
            raise ConfigError("night window is empty")

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, object]) -> "FilterRules":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(cfg) - set(known)
        if unknown:
            raise ConfigError(f"unknown filter rule(s): {sorted(unknown)}")
        kw = {}
        for k, v in cfg.items():
            kw[k] = int(v) if k == "isolation_gap_days" else float(v)
        return cls(**kw)

    def night_segments(self) -> list[tuple[float, float]]:
        """Night window as minute ranges within one day."""
        a, b = self.night_start_hour * 60.0, self.night_end_hour * 60.0
        if a < b:
            return [(a, b)]
        return [(0.0, b), (a, float(DAY_MINUTES))]


def sanitize_events(log: EventLog) -> np.ndarray:
    """Pair starts with ends and merge overlaps.

    A start followed by another start loses its pairing (the later start is
    kept); an end with no open start is dropped, as is a trailing start.
    Returns a ``(K, 2)`` array of disjoint sleep intervals sorted by start.
    """
    pairs = []
    open_start = None
    for t, kind in log.events:
        if kind == START:
            open_start = t
        elif open_start is not None:
            pairs.append((open_start, t))
            open_start = None
    merged: list[list[float]] = []
    for a, b in sorted(pairs):
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return np.array(merged, dtype=float).reshape(-1, 2)


def reshape_series(samples, ell: int, subject_id: str = "") -> SeriesMatrix:
    """Lay a sampled series out as rows of ``ell`` consecutive samples.

    Parameters
    ----------
    samples : mapping or iterable of (index, value)
        1-based sample indices; gaps are allowed.
    ell : int
        Samples per period.

    Row ``t`` column ``i`` (both 1-based) holds sample ``(t-1)*ell + i``. A row
    is observed only if all of its samples are present.
    """
    if ell < 2:
        raise InvalidPeriod(f"period length must be >= 2, got {ell}")
    items = list(samples.items()) if isinstance(samples, Mapping) else list(samples)
    if not items:
        raise EmptySeries(f"{subject_id}: no samples")
    idx = np.array([int(i) for i, _ in items])
    vals = np.array([float(v) for _, v in items])
    if idx.min() < 1:
        raise ValueError("sample indices must be positive")
    if np.unique(idx).size != idx.size:
        raise ValueError("duplicate sample index")
    T = -(-int(idx.max()) // ell)
    flat = np.full(T * ell, np.nan)
    flat[idx - 1] = vals
    grid = flat.reshape(T, ell)
    grid[np.isnan(grid).any(axis=1)] = np.nan
    return SeriesMatrix(subject_id, grid)


def flatten_series(m: SeriesMatrix) -> list[tuple[int, float]]:
    """Inverse of :func:`reshape_series` on observed rows."""
    ell = m.row_len
    out = []
    for row in m.observed:
        base = row * ell
        out.extend((base + i + 1, float(v)) for i, v in enumerate(m.values[row]))
    return out


def _cumulative_sleep(intervals):
    """Piecewise-linear A(x) = minutes asleep in [0, x]."""
    if intervals.size == 0:
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    lengths = intervals[:, 1] - intervals[:, 0]
    before = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
    xs = intervals.ravel()
    ys = np.column_stack([before, before + lengths]).ravel()
    return lambda x: np.interp(x, xs, ys, left=0.0, right=float(ys[-1]))


def _event_days(intervals) -> np.ndarray:
    """1-based days on which a surviving start or end was reported."""
    return np.unique(np.floor(intervals.ravel() / DAY_MINUTES).astype(int) + 1)


def rasterize_events(log: EventLog, sample_minutes: float = 10) -> SeriesMatrix:
    """Fraction of each sample window spent asleep, one row per day.

    Days on which no (sanitized) event was reported are unobserved. Intervals
    crossing midnight contribute to both days.
    """
    if sample_minutes <= 0 or DAY_MINUTES % sample_minutes:
        raise InvalidPeriod(f"sample length {sample_minutes} does not divide a day")
    ell = int(DAY_MINUTES // sample_minutes)
    if ell < 2:
        raise InvalidPeriod("a day must hold at least two samples")
    intervals = sanitize_events(log)
    if intervals.size == 0:
        raise MalformedLog(f"{log.subject_id}: no complete sleep interval")
    days = _event_days(intervals)
    T = max(int(days.max()), int(math.ceil(intervals[-1, 1] / DAY_MINUTES)))
    asleep = _cumulative_sleep(intervals)
    edges = np.arange(T * ell + 1) * float(sample_minutes)
    grid = np.clip(np.diff(asleep(edges)) / sample_minutes, 0.0, 1.0).reshape(T, ell)
    observed = np.zeros(T, dtype=bool)
    observed[days - 1] = True
    grid[~observed] = np.nan
    return SeriesMatrix(log.subject_id, grid, intervals=intervals, sample_minutes=float(sample_minutes))


def _touched_days(a, b):
    """1-based days overlapping the interval (a, b)."""
    first = int(math.floor(a / DAY_MINUTES)) + 1
    last = max(first, int(math.ceil(b / DAY_MINUTES)))
    return np.arange(first, last + 1)


def _mark(bad, days):
    days = days[(days >= 1) & (days <= bad.size)]
    bad[days - 1] = True


def _violations_from_intervals(m: SeriesMatrix, rules: FilterRules) -> np.ndarray:
    T = m.num_rows
    iv = m.intervals
    bad = np.zeros(T, dtype=bool)
    for a, b in iv:
        if b - a > rules.max_sleep_hours * 60.0:
            _mark(bad, _touched_days(a, b))
    for (_, a), (b, _) in zip(iv[:-1], iv[1:]):
        if b - a <= rules.max_awake_hours * 60.0:
            continue
        # a gap containing a whole calendar day had no reports that day:
        # missing data, not an awake period
        first_full = math.ceil(a / DAY_MINUTES)
        if (first_full + 1) * DAY_MINUTES <= b:
            continue
        _mark(bad, _touched_days(a, b))
    asleep = _cumulative_sleep(iv)
    starts = np.arange(T) * float(DAY_MINUTES)
    night = np.zeros(T)
    for lo, hi in rules.night_segments():
        night += asleep(starts + hi) - asleep(starts + lo)
    bad |= night <= 0.0
    return bad


def _runs(flags):
    """(start, length) of runs of True in a 1-D boolean array."""
    padded = np.concatenate([[False], flags, [False]]).astype(int)
    d = np.diff(padded)
    starts = np.flatnonzero(d == 1)
    return starts, np.flatnonzero(d == -1) - starts


def _violations_from_grid(m: SeriesMatrix, rules: FilterRules) -> np.ndarray:
    T, ell = m.values.shape
    sample = m.sample_minutes or DAY_MINUTES / ell
    obs = m.mask
    bad = np.zeros(T, dtype=bool)
    # timeline of observed samples; missing rows break every run
    vals = np.where(obs[:, None], m.values, np.nan).ravel()
    for flags, limit in ((vals >= 0.5, rules.max_sleep_hours), (vals < 0.5, rules.max_awake_hours)):
        for s, n in zip(*_runs(flags)):
            if n * sample > limit * 60.0:
                bad[s // ell : (s + n - 1) // ell + 1] = True
    cols = np.arange(ell) * sample
    in_night = np.zeros(ell, dtype=bool)
    for lo, hi in rules.night_segments():
        in_night |= (cols + sample > lo) & (cols < hi)
    night = np.nansum(np.where(obs[:, None], m.values, 0.0)[:, in_night], axis=1)
    bad |= night <= 0.0
    return bad


def _drop_isolated(keep: np.ndarray, gap: int) -> np.ndarray:
    """Repeatedly drop days with >= gap missing days on both sides."""
    keep = keep.copy()
    T = keep.size
    while True:
        days = np.flatnonzero(keep)
        if days.size == 0:
            return keep
        # out-of-range neighbours count as missing
        before = np.diff(np.concatenate([[-(gap + 1)], days])) - 1
        after = np.diff(np.concatenate([days, [T + gap]])) - 1
        isolated = (before >= gap) & (after >= gap)
        if not isolated.any():
            return keep
        keep[days[isolated]] = False


def filter_implausible_days(m: SeriesMatrix, rules: FilterRules | None = None) -> SeriesMatrix:
    """Mark biologically implausible days as unobserved.

    A day is dropped if it overlaps a sleep period longer than
    ``max_sleep_hours`` or an awake period longer than ``max_awake_hours``, has
    no sleep inside the night window, or ends up with at least
    ``isolation_gap_days`` missing days immediately on both sides. Runs are
    measured on the sanitized intervals when the matrix carries them and on
    the thresholded grid otherwise. Raises EmptySeries if no day survives.
    """
    rules = rules or FilterRules()
    if m.intervals is not None:
        bad = _violations_from_intervals(m, rules)
    else:
        bad = _violations_from_grid(m, rules)
    keep = _drop_isolated(m.mask & ~bad, rules.isolation_gap_days)
    if not keep.any():
        raise EmptySeries(f"{m.subject_id}: no plausible day left")
    return m.with_mask(keep)


def filter_sparse_subjects(d: Dataset, rules: FilterRules | None = None) -> Dataset:
    """Drop subjects with observed fraction below ``1 - max_missing_fraction``."""
    rules = rules or FilterRules()
    floor = 1.0 - rules.max_missing_fraction
    kept = [s for s in d if s.observed.size / s.num_rows >= floor - 1e-12]
    return d.replace(kept)


def ingest_logs(
    logs: Iterable[EventLog], sample_minutes: float = 10, rules: FilterRules | None = None
) -> Dataset:
    """Rasterize, filter days, then filter subjects."""
    rules = rules or FilterRules()
    series = []
    for log in logs:
        try:
            series.append(filter_implausible_days(rasterize_events(log, sample_minutes), rules))
        except EmptySeries:
            continue
    d = Dataset(tuple(series), period_minutes=DAY_MINUTES, sample_minutes=float(sample_minutes))
    return filter_sparse_subjects(d, rules)
