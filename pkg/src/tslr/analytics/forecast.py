"""Nadaraya-Watson forecasting of future days from a subject's past.

The model-based forecaster regresses future coefficient trajectories on
past ones, component by component. Two baselines work on raw data: the
per-day training mean and kernel regression on raw rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import BasisSet, CoefficientSet, Dataset, FactorModel, SeriesMatrix
from ..errors import NoGroundTruth, NoOverlap
from ..solver import update_coefficients
from ._masked import align_coefficients, align_series, masked_sq_distances, to_coefficient_set, to_series

__all__ = [
    "ForecastTask",
    "KRForecast",
    "MethodScore",
    "ForecastReport",
    "fit_coefficients_fixed_basis",
    "kr_forecast",
    "kr_raw_forecast",
    "mean_prediction",
    "baselines",
    "sigma_grid",
    "cross_validate_sigma",
    "evaluate_forecast",
    "run_forecast",
    "METHODS",
]

METHODS = ("mean", "kr_raw", "kr_nmfts", "rank_r_truth")
CV_FOLDS = 5
CV_GRID = 10


@dataclass(frozen=True)
class ForecastTask:
    """Forecast days ``[future[0], future[1])`` from days ``[past[0], past[1])``.

    ``sigma`` fixes the kernel bandwidth; None selects it by cross-validation.
    """

    past: tuple[int, int]
    future: tuple[int, int]
    min_observed_fraction: float = 0.7
    sigma: float | None = None

    def __post_init__(self):
        (t0, t1), (u0, u1) = self.past, self.future
        if not (1 <= t0 < t1 <= u0 < u1):
            raise ValueError(f"windows must be ordered and disjoint, got {self.past} and {self.future}")
        if not 0.0 < self.min_observed_fraction <= 1.0:
            raise ValueError("min_observed_fraction must lie in (0, 1]")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def eligible(self, y: SeriesMatrix) -> bool:
        """Enough observed days in both windows to serve as a test subject."""
        f = self.min_observed_fraction
        return y.observed_fraction(*self.past) >= f and y.observed_fraction(*self.future) >= f


@dataclass(frozen=True, eq=False)
class KRForecast:
    coeffs: CoefficientSet
    fallback: bool


def fit_coefficients_fixed_basis(
    y: SeriesMatrix, basis: BasisSet, lam: float, window: tuple[int, int] | None = None
) -> CoefficientSet:
    """Coefficients of ``y`` (optionally restricted to a day window) under a fixed basis."""
    if window is not None:
        y = y.window(*window)
    return update_coefficients(y, basis, lam)


def _nw(d2, fut, fut_mask, sigma):
    """Kernel-weighted per-day average of ``fut`` over the subjects observing each day.

    Weights are shifted by the smallest squared distance before
    exponentiation; the shift cancels in the normalization.
    Returns ``(pred (D, p), defined (D,), fallback)``.
    """
    finite = np.isfinite(d2)
    if not finite.any():
        raise NoOverlap("no training subject shares a past day with the test subject")
    lw = np.where(finite, -(d2 - d2[finite].min()) / (2.0 * sigma * sigma), -np.inf)
    w = np.exp(lw)
    obs = fut_mask.astype(float)
    den = w @ obs
    num = np.einsum("n,nd,ndp->dp", w, obs, fut)
    cnt = obs.sum(axis=0)
    defined = cnt > 0
    under = defined & (den <= 0.0)
    pred = np.zeros(num.shape)
    ok = den > 0
    pred[ok] = num[ok] / den[ok, None]
    if under.any():
        plain = np.einsum("nd,ndp->dp", obs, fut)
        pred[under] = plain[under] / cnt[under, None]
    return pred, defined, bool(under.any())


def _kr_coeff_arrays(pX, pM, fX, fM, x, m, sigma):
    r = pX.shape[2]
    out = np.zeros((fX.shape[1], r))
    fallback = False
    defined = None
    for i in range(r):
        d2 = masked_sq_distances(pX[:, :, i : i + 1], pM, x[:, i : i + 1], m)
        pred, defined, fb = _nw(d2, fX[:, :, i : i + 1], fM, sigma)
        out[:, i] = pred[:, 0]
        fallback |= fb
    return out, defined, fallback


def kr_forecast(
    train: list[tuple[CoefficientSet, CoefficientSet]], test_past: CoefficientSet, sigma: float
) -> KRForecast:
    """Predict future coefficients of ``test_past`` from training (past, future) pairs.

    For component i the weight of training subject n is
    ``exp(-d_i(n)^2 / (2 sigma^2))`` with ``d_i`` the masked distance on
    component i over the past windows. Each future day is predicted from
    the training subjects observed that day. If every weight of a day
    underflows the prediction falls back to the plain mean, and
    ``fallback`` is set.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not train:
        raise NoOverlap("no training pairs")
    pdays = np.union1d(np.unique(np.concatenate([p.days for p, _ in train])), test_past.days)
    _, pX, pM = align_coefficients([p for p, _ in train], days=pdays)
    _, x, m = align_coefficients([test_past], days=pdays)
    fdays, fX, fM = align_coefficients([f for _, f in train])
    pred, defined, fb = _kr_coeff_arrays(pX, pM, fX, fM, x[0], m[0], sigma)
    return KRForecast(to_coefficient_set(test_past.subject_id, fdays, pred, defined), fb)


def mean_prediction(train: Dataset, window: tuple[int, int], subject_id: str = "mean") -> SeriesMatrix:
    """Per-(day, interval) mean over the training subjects observed that day."""
    start, stop = window
    days = np.arange(start, stop)
    _, X, M = align_series(train, days=days)
    cnt = M.sum(axis=0)
    sums = np.einsum("nd,ndp->dp", M.astype(float), X)
    pred = sums / np.maximum(cnt, 1)[:, None]
    return to_series(subject_id, days, pred, cnt > 0, stop - 1)


def kr_raw_forecast(train: Dataset, test: SeriesMatrix, task: ForecastTask, sigma: float) -> tuple[SeriesMatrix, bool]:
    """Nadaraya-Watson on raw rows with the masked row distance over the past window."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    pdays = np.arange(*task.past)
    fdays = np.arange(*task.future)
    _, pX, pM = align_series(train, days=pdays)
    _, fX, fM = align_series(train, days=fdays)
    _, x, m = align_series([test], days=pdays)
    d2 = masked_sq_distances(pX, pM, x[0], m[0])
    pred, defined, fb = _nw(d2, fX, fM, sigma)
    return to_series(test.subject_id, fdays, pred, defined, task.future[1] - 1), fb


def _entry_errors(pred: SeriesMatrix, truth: SeriesMatrix, window):
    start, stop = window
    n = min(pred.num_rows, truth.num_rows, stop - 1)
    rows = np.arange(start - 1, n)
    P, Y = pred.values[rows], truth.values[rows]
    ok = ~np.isnan(P[:, 0]) & ~np.isnan(Y[:, 0])
    if not ok.any():
        raise NoGroundTruth(f"{truth.subject_id}: no observed day in [{start}, {stop}) to compare")
    return (P[ok] - Y[ok]).ravel()


def evaluate_forecast(pred: SeriesMatrix, truth: SeriesMatrix, window: tuple[int, int], metric: str = "mae") -> float:
    """Mean absolute (or root-mean squared) error per entry over observed truth days.

    Only days observed in the truth and predicted by ``pred`` count.
    """
    e = _entry_errors(pred, truth, window)
    if metric == "mae":
        return float(np.mean(np.abs(e)))
    if metric == "rmse":
        return float(np.sqrt(np.mean(e * e)))
    raise ValueError(f"unknown metric {metric!r}")


def sigma_grid(base: float, size: int = CV_GRID) -> np.ndarray:
    return base * np.logspace(-1.0, 1.0, size)


def _median_pairwise(X, M, per_component: bool) -> float:
    n = X.shape[0]
    vals = []
    for a in range(n - 1):
        if per_component:
            for i in range(X.shape[2]):
                d2 = masked_sq_distances(X[a + 1 :, :, i : i + 1], M[a + 1 :], X[a, :, i : i + 1], M[a])
                vals.append(d2)
        else:
            vals.append(masked_sq_distances(X[a + 1 :], M[a + 1 :], X[a], M[a]))
    d = np.sqrt(np.concatenate(vals)) if vals else np.zeros(0)
    d = d[np.isfinite(d) & (d > 0)]
    return float(np.median(d)) if d.size else 1.0


def cross_validate_sigma(predict, n: int, base: float, folds: int = CV_FOLDS, grid_size: int = CV_GRID, seed: int = 0):
    """Pick the bandwidth with the smallest mean validation error.

    ``predict(train_idx, val_idx, sigma)`` returns one error per validation
    subject (NaN to skip). Subjects are split into ``folds`` random folds.
    Returns ``(sigma, grid, scores)``; ties go to the smaller bandwidth.
    """
    grid = sigma_grid(base, grid_size)
    if n < 2:
        return float(grid[grid_size // 2]), grid, np.full(grid_size, np.nan)
    order = np.random.default_rng(seed).permutation(n)
    parts = [p for p in np.array_split(order, min(folds, n)) if p.size]
    scores = np.empty(grid_size)
    for g, s in enumerate(grid):
        errs = []
        for p in parts:
            tr = np.setdiff1d(order, p)
            errs.extend(predict(tr, p, s))
        errs = np.asarray(errs, dtype=float)
        scores[g] = np.nanmean(errs) if np.isfinite(errs).any() else np.inf
    return float(grid[int(np.argmin(scores))]), grid, scores


@dataclass(frozen=True, eq=False)
class MethodScore:
    name: str
    errors: dict[str, float]
    sigma: float | None = None
    fallbacks: int = 0

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.errors.values())))

    @property
    def std(self) -> float:
        return float(np.std(list(self.errors.values())))


@dataclass(frozen=True, eq=False)
class ForecastReport:
    task: ForecastTask
    metric: str
    scores: dict[str, MethodScore]
    predictions: dict[str, dict[str, SeriesMatrix]] = field(default_factory=dict)

    @property
    def test_ids(self) -> tuple[str, ...]:
        return tuple(next(iter(self.scores.values())).errors)


def baselines(
    train: Dataset, task: ForecastTask, test_past: SeriesMatrix, sigma: float | None = None, seed: int = 0
) -> dict[str, SeriesMatrix]:
    """Mean and raw-data kernel regression predictions for one test subject."""
    if sigma is None:
        sigma = _raw_sigma(train, task, seed)
    kr, _ = kr_raw_forecast(train, test_past, task, sigma)
    return {"mean_prediction": mean_prediction(train, task.future, test_past.subject_id), "kr_raw_prediction": kr}


def _raw_sigma(
    train: Dataset, task: ForecastTask, seed: int, metric: str = "mae", folds: int = CV_FOLDS, grid_size: int = CV_GRID
) -> float:
    series = list(train)
    _, pX, pM = align_series(series, days=np.arange(*task.past))
    base = _median_pairwise(pX, pM, per_component=False)

    def predict(tr, val, s):
        sub = train.replace([series[i] for i in tr])
        out = []
        for v in val:
            try:
                pred, _ = kr_raw_forecast(sub, series[v], task, s)
                out.append(evaluate_forecast(pred, series[v], task.future, metric))
            except (NoOverlap, NoGroundTruth):
                out.append(np.nan)
        return out

    return cross_validate_sigma(predict, len(series), base, folds, grid_size, seed)[0]


def run_forecast(
    model: FactorModel,
    train: Dataset,
    test: Dataset,
    task: ForecastTask,
    lam: float | None = None,
    metric: str = "mae",
    seed: int = 0,
    keep_predictions: bool = False,
    folds: int = CV_FOLDS,
    grid_size: int = CV_GRID,
) -> ForecastReport:
    """Score all four forecasters on the eligible test subjects.

    Training pairs are the model's coefficients of the training subjects
    cut to the past and future windows. Test subjects need the task's
    observed fraction in both windows. Test past coefficients and the
    rank-r ground truth (the best reconstruction of the true future with
    the trained basis) come from fixed-basis coefficient fits.
    """
    lam = model.lam if lam is None else lam
    basis = model.basis
    ids = set(model.subject_ids)
    tr_series = [y for y in train if y.subject_id in ids]
    pairs, kept = [], []
    for y in tr_series:
        c = model.coefficients_for(y.subject_id)
        p, f = c.window(*task.past), c.window(*task.future)
        if p.days.size and f.days.size:
            pairs.append((p, f))
            kept.append(y)
    if not pairs:
        raise NoOverlap("no training subject is observed in both windows")
    tests = [y for y in test if task.eligible(y)]
    if not tests:
        raise NoGroundTruth("no test subject meets the observation requirement")
    raw_train = train.replace(kept)
    fut_len = task.future[1] - 1

    pdays = np.arange(*task.past)
    _, pX, pM = align_coefficients([p for p, _ in pairs], days=pdays)
    fdays, fX, fM = align_coefficients([f for _, f in pairs], days=np.arange(*task.future))

    sigma = task.sigma
    if sigma is None:
        base = _median_pairwise(pX, pM, per_component=True)

        def predict(tr, val, s):
            out = []
            for v in val:
                try:
                    pred, defined, _ = _kr_coeff_arrays(pX[tr], pM[tr], fX[tr], fM[tr], pX[v], pM[v], s)
                    rec = to_coefficient_set(kept[v].subject_id, fdays, pred, defined).reconstruct(basis, fut_len)
                    out.append(evaluate_forecast(rec, kept[v], task.future, metric))
                except (NoOverlap, NoGroundTruth):
                    out.append(np.nan)
            return out

        sigma = cross_validate_sigma(predict, len(pairs), base, folds, grid_size, seed)[0]
    raw_sigma = task.sigma
    if raw_sigma is None:
        raw_sigma = _raw_sigma(raw_train, task, seed, metric, folds, grid_size)

    errs = {m: {} for m in METHODS}
    preds = {m: {} for m in METHODS}
    fallbacks = {m: 0 for m in METHODS}
    for y in tests:
        sid = y.subject_id
        past = fit_coefficients_fixed_basis(y, basis, lam, task.past)
        _, x, mm = align_coefficients([past], days=pdays)
        pred, defined, fb = _kr_coeff_arrays(pX, pM, fX, fM, x[0], mm[0], sigma)
        fallbacks["kr_nmfts"] += fb
        out = {
            "mean": mean_prediction(raw_train, task.future, sid),
            "kr_nmfts": to_coefficient_set(sid, fdays, pred, defined).reconstruct(basis, fut_len),
            "rank_r_truth": fit_coefficients_fixed_basis(y, basis, lam, task.future).reconstruct(basis, fut_len),
        }
        out["kr_raw"], fb = kr_raw_forecast(raw_train, y, task, raw_sigma)
        fallbacks["kr_raw"] += fb
        for name, p in out.items():
            errs[name][sid] = evaluate_forecast(p, y, task.future, metric)
            if keep_predictions:
                preds[name][sid] = p
    sig = {"kr_nmfts": sigma, "kr_raw": raw_sigma}
    scores = {m: MethodScore(m, errs[m], sig.get(m), fallbacks[m]) for m in METHODS}
    return ForecastReport(task, metric, scores, preds if keep_predictions else {})
