"""Lloyd's k-means under the masked, intersection-normalized metric."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Dataset, FactorModel
from ..errors import TooManyClusters
from ._masked import align_coefficients, align_series, masked_sq_distances
from .trends import default_components

__all__ = ["RAW", "ClusterAssignment", "kmeans"]

RAW = "raw"
DEFAULT_RESTARTS = 10
MAX_LLOYD_ITER = 100


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Result of :func:`kmeans`.

    ``centroids[c, k]`` is the mean over members of cluster c observed on
    ``days[k]`` (NaN where no member is). ``labels`` are 0-based.
    """

    k: int
    subject_ids: tuple[str, ...]
    labels: np.ndarray
    days: np.ndarray
    centroids: np.ndarray
    components: tuple[int, ...] | str
    cost: float
    cost_trace: tuple[float, ...]
    converged: bool

    def members(self, c: int) -> list[str]:
        return [s for s, lab in zip(self.subject_ids, self.labels) if lab == c]


def _centroids(X, M, labels, k, previous):
    C, CM = previous[0].copy(), previous[1].copy()
    for c in range(k):
        sel = labels == c
        if not sel.any():
            continue  # empty cluster keeps its centroid
        counts = M[sel].sum(axis=0)
        sums = np.einsum("nd,ndp->dp", M[sel].astype(float), X[sel])
        CM[c] = counts > 0
        C[c] = np.where(CM[c][:, None], sums / np.maximum(counts, 1)[:, None], 0.0)
    return C, CM


def _lloyd(X, M, init, max_iter):
    k = init.size
    C, CM = X[init].copy(), M[init].copy()
    labels = None
    trace = []
    converged = False
    for _ in range(max_iter):
        d2 = np.column_stack([masked_sq_distances(X, M, C[c], CM[c]) for c in range(k)])
        new = np.argmin(d2, axis=1)
        cost = float(np.sum(np.where(np.isfinite(d2[np.arange(len(new)), new]), d2[np.arange(len(new)), new], 0.0)))
        trace.append(cost)
        if labels is not None and np.array_equal(new, labels):
            converged = True
            break
        labels = new
        C, CM = _centroids(X, M, labels, k, (C, CM))
    return labels, C, CM, trace, converged


def kmeans(
    source: FactorModel | Dataset,
    k: int,
    components=None,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
    max_iter: int = MAX_LLOYD_ITER,
) -> ClusterAssignment:
    """Cluster subjects with Lloyd iterations under the masked metric.

    Parameters
    ----------
    source : FactorModel or Dataset
        Coefficient trajectories (model) or raw matrices (dataset).
    k : int
    components : sequence of int or ``"raw"``, optional
        Coefficient components used by the metric; defaults to the first
        three. Ignored (and implied ``"raw"``) for a Dataset.
    seed, restarts : int
        Each restart starts from ``k`` distinct subjects drawn from a
        generator seeded with ``seed``; the lowest-cost run is returned.
    max_iter : int
        Cap on Lloyd iterations per restart.

    Distances only use days observed by both the subject and the centroid;
    centroids are per-day means over the members observed that day.
    """
    if isinstance(source, Dataset) or components == RAW:
        if not isinstance(source, Dataset):
            raise TypeError("raw-data clustering needs a Dataset")
        days, X, M = align_series(source)
        ids, comps = tuple(source.subject_ids), RAW
    else:
        comps = tuple(default_components(source.rank) if components is None else components)
        days, X, M = align_coefficients(source.coeffs, comps)
        ids = tuple(source.subject_ids)
    n = len(ids)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise TooManyClusters(f"k={k} exceeds {n} subjects")

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(restarts, 1)):
        init = np.sort(rng.choice(n, size=k, replace=False))
        labels, C, CM, trace, converged = _lloyd(X, M, init, max_iter)
        if best is None or trace[-1] < best[3][-1]:
            best = (labels, C, CM, trace, converged)
    labels, C, CM, trace, converged = best
    centroids = np.where(CM[:, :, None], C, np.nan)
    return ClusterAssignment(k, ids, labels, days, centroids, comps, trace[-1], tuple(trace), converged)
