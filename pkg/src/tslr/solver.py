"""Fitting nonnegative time-smoothed factor models.

The model approximates every observed row ``t`` of subject ``n`` as
``Y[n][t, :] ~ sum_j C[n][j](t) * F[j, :]`` and minimizes

    sum_n sum_{t observed} ||Y[n][t] - C[n](t) @ F||^2
        + lam * sum_n sum_j ||D C[n][j]||^2

over ``C >= 0`` and ``F >= 0`` with unit-norm rows of ``F``. ``D`` is the
second difference applied to the compacted sequence of observed rows.

The fit alternates two convex subproblems, each solved exactly:

* coefficients, one QP per subject over all its ``r * |T_n|`` unknowns;
* basis, one r-dimensional QP per column, followed by row normalization.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .core import BasisSet, CoefficientSet, Dataset, FactorModel, SeriesMatrix
from .errors import DegenerateComponent, EmptyDataset, RankExceedsData, ShapeMismatch
from .nnls import SymBanded, nnls_solve, projected_gradient_solve

__all__ = [
    "second_difference",
    "second_difference_matrix",
    "update_coefficients",
    "update_basis",
    "fit",
    "FitOptions",
    "objective",
    "coefficient_terms",
    "init_basis",
    "singular_spectrum",
]

log = logging.getLogger(__name__)

DEFAULT_RANK = 5
DEFAULT_LAMBDA = 1e5
QP_SIZE_CAP = 50_000


def second_difference(c) -> np.ndarray:
    """``out[k] = c[k+2] - 2 c[k+1] + c[k]``; empty for fewer than 3 samples."""
    c = np.asarray(c, dtype=float)
    if c.shape[0] < 3:
        return np.zeros((0,) + c.shape[1:])
    return c[2:] - 2.0 * c[1:-1] + c[:-2]


def second_difference_matrix(m: int) -> sp.csr_matrix:
    """Sparse ``(max(m-2, 0), m)`` matrix of the second-difference stencil."""
    if m < 3:
        return sp.csr_matrix((0, m))
    return sp.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(m - 2, m), format="csr")


def _second_difference_gram_bands(m):
    """Diagonal, first and second sub-diagonal of D'D for length m."""
    w = [np.zeros(m), np.zeros(max(m - 1, 0)), np.zeros(max(m - 2, 0))]
    if m >= 3:
        k = np.arange(m - 2)
        np.add.at(w[0], k, 1.0)
        np.add.at(w[0], k + 1, 4.0)
        np.add.at(w[0], k + 2, 1.0)
        np.add.at(w[1], k, -2.0)
        np.add.at(w[1], k + 1, -2.0)
        w[2] += 1.0
    return w


def _coefficient_qp(Y, functions, lam):
    """Banded QP for one subject; unknowns ordered day-major, x[t*r + j].

    Q = kron(I_m, F F') + lam * kron(D'D, I_r), bandwidth 2r.
    """
    m = Y.shape[0]
    r = functions.shape[0]
    gram = functions @ functions.T
    b = (Y @ functions.T).ravel()
    ab = np.zeros((2 * r + 1, m * r))
    for k in range(r):
        # within-day block: Q[t*r + j + k, t*r + j] = gram[j + k, j]
        col = np.zeros(r)
        col[: r - k] = np.diagonal(gram, -k)
        ab[k] += np.tile(col, m)
    if lam:
        for dd, w in enumerate(_second_difference_gram_bands(m)):
            ab[dd * r, : w.size * r] += lam * np.repeat(w, r)
    return SymBanded(ab), b


def update_coefficients(
    y: SeriesMatrix,
    basis: BasisSet,
    lam: float,
    warm_start: CoefficientSet | None = None,
    size_cap: int = QP_SIZE_CAP,
) -> CoefficientSet:
    """Exact coefficient update for one subject with the basis held fixed.

    Solves the full stacked QP in the ``r * |T|`` coefficients of the subject.
    Problems larger than ``size_cap`` unknowns go to projected gradient.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if y.row_len != basis.row_len:
        raise ShapeMismatch(f"{y.subject_id}: row length {y.row_len} != basis length {basis.row_len}")
    Y = y.observed_values
    m, r = Y.shape[0], basis.rank
    Q, b = _coefficient_qp(Y, basis.functions, lam)
    x0 = None
    if warm_start is not None and warm_start.values.shape == (m, r):
        x0 = warm_start.values.ravel()
    if m * r > size_cap:
        x = projected_gradient_solve(Q, b, x0=x0)
    else:
        x = nnls_solve(Q, b, x0=x0)
    return CoefficientSet(y.subject_id, y.days, x.reshape(m, r))


def coefficient_terms(y: SeriesMatrix, basis: BasisSet, coeffs: CoefficientSet) -> tuple[float, float]:
    """``(fit, smoothness)`` of one subject, smoothness without the lam factor."""
    if not np.array_equal(coeffs.days, y.days):
        raise ShapeMismatch(f"{y.subject_id}: coefficient days do not match observed rows")
    if coeffs.rank != basis.rank or y.row_len != basis.row_len:
        raise ShapeMismatch(f"{y.subject_id}: model and data dimensions differ")
    resid = y.observed_values - coeffs.values @ basis.functions
    return float(np.sum(resid * resid)), float(np.sum(second_difference(coeffs.values) ** 2))


def objective(d: Dataset, m: FactorModel) -> float:
    """Value of the fitting objective for model ``m`` on dataset ``d``."""
    if len(d) != len(m.coeffs):
        raise ShapeMismatch(f"dataset has {len(d)} subjects, model has {len(m.coeffs)}")
    total = 0.0
    for y, c in zip(d, m.coeffs):
        if y.subject_id != c.subject_id:
            raise ShapeMismatch(f"subject order differs: {y.subject_id} vs {c.subject_id}")
        fit_term, smooth = coefficient_terms(y, m.basis, c)
        total += fit_term + m.lam * smooth
    return total


def _reseed_row(Y, C, raw):
    resid = Y - C @ raw
    t = int(np.argmax(np.einsum("ij,ij->i", resid, resid)))
    for cand in (np.maximum(resid[t], 0.0), Y[t]):
        if np.linalg.norm(cand) > 0:
            return cand
    return np.ones(Y.shape[1])


def update_basis(
    d: Dataset,
    coeffs,
    previous: BasisSet | None = None,
    lam: float = 0.0,
    reseed: bool = True,
) -> BasisSet:
    """Exact basis update with coefficients held fixed, then row normalization.

    The fit term decouples over columns: each column of ``F`` is an
    r-dimensional nonnegative QP with the shared matrix ``C'C``.

    With ``lam > 0`` each function is additionally charged
    ``lam * ||D C_j||^2 * ||F_j||^2``. This is the smoothness cost the
    coefficients would carry if the function's norm were moved into them, so
    normalizing afterwards can no longer increase the full objective. With
    ``lam = 0`` (or perfectly smooth coefficients) it is the plain fit-term
    update.

    A function that comes out identically zero is reseeded from the positive
    part of the observed row with the largest residual (``reseed=False``
    raises DegenerateComponent instead).
    """
    coeffs = list(coeffs)
    if len(coeffs) != len(d):
        raise ShapeMismatch(f"{len(coeffs)} coefficient sets for {len(d)} subjects")
    for y, c in zip(d, coeffs):
        if not np.array_equal(c.days, y.days):
            raise ShapeMismatch(f"{y.subject_id}: coefficient days do not match observed rows")
    Y = d.stacked()
    C = np.vstack([c.values for c in coeffs])
    gram = C.T @ C
    if lam:
        rough = sum(np.sum(second_difference(c.values) ** 2, axis=0) for c in coeffs)
        gram = gram + lam * np.diag(rough)
    rhs = C.T @ Y
    r, ell = rhs.shape
    raw = np.empty((r, ell))
    for i in range(ell):
        x0 = None if previous is None else previous.functions[:, i]
        raw[:, i] = nnls_solve(gram, rhs[:, i], x0=x0)
    for j in range(r):
        if not np.any(raw[j] > 0):
            if not reseed:
                raise DegenerateComponent(f"basis function {j} collapsed to zero")
            log.warning("basis function %d collapsed to zero; reseeding", j)
            raw[j] = _reseed_row(Y, C, raw)
    return BasisSet.normalized(raw)


def init_basis(d: Dataset, r: int, seed: int | None = 0, n_iter: int = 200) -> BasisSet:
    """Basis initialization by multiplicative-update NMF on the stacked observed rows."""
    if len(d) == 0:
        raise EmptyDataset("cannot initialize from an empty dataset")
    X = d.stacked()
    M, ell = X.shape
    if r < 1 or r > ell or r > M:
        raise RankExceedsData(f"rank {r} not possible for a {M}x{ell} stacked matrix")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(X.mean(), 1e-12) / r)
    W = scale * (rng.random((M, r)) + 1e-3)
    H = scale * (rng.random((r, ell)) + 1e-3)
    floor = 1e-9
    for _ in range(n_iter):
        H *= (W.T @ X) / np.maximum(W.T @ W @ H, floor)
        W *= (X @ H.T) / np.maximum(W @ (H @ H.T), floor)
    for j in range(r):
        if not np.any(H[j] > 0):
            H[j] = 1.0
    return BasisSet.normalized(H)


def singular_spectrum(d: Dataset, k: int) -> np.ndarray:
    """Top ``k`` singular values of the stacked observed-row matrix, descending."""
    X = d.stacked()
    M, ell = X.shape
    if k < 1 or k > min(M, ell):
        raise RankExceedsData(f"k={k} exceeds min{(M, ell)}")
    if M > ell:
        # tall matrix: the triangular factor has the same singular values
        X = scipy.linalg.qr(X, mode="r", check_finite=False)[0][:ell]
    return scipy.linalg.svdvals(X, check_finite=False)[:k]


@dataclass
class FitOptions:
    max_outer: int = 200
    rel_tol: float = 1e-5
    seed: int | None = 0
    threads: int = 1
    size_cap: int = QP_SIZE_CAP
    init_iter: int = 200
    # charge the basis step with the coefficients' roughness (monotone trace)
    smooth_basis_step: bool = True


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def fit(
    d: Dataset,
    r: int = DEFAULT_RANK,
    lam: float = DEFAULT_LAMBDA,
    opts: FitOptions | None = None,
    basis: BasisSet | None = None,
) -> FactorModel:
    """Fit the model by alternating exact minimization.

    Starting from the NMF initialization (or ``basis`` if given), the
    coefficients are solved for, then each outer iteration updates the basis
    and re-solves the coefficients. ``objective_trace[0]`` is the objective
    after the first coefficient solve and each later entry the objective
    after one outer iteration, so every recorded value belongs to a
    consistent (basis, optimal coefficients) pair. Iteration stops when the
    relative decrease drops below ``opts.rel_tol`` or after ``opts.max_outer``
    outer iterations.
    """
    opts = opts or FitOptions()
    if len(d) == 0:
        raise EmptyDataset("cannot fit an empty dataset")
    if r < 1:
        raise ValueError("rank must be >= 1")
    if lam < 0:
        raise ValueError("lam must be nonnegative")

    series = list(d)
    if basis is None:
        basis = init_basis(d, r, seed=opts.seed, n_iter=opts.init_iter)
    elif basis.rank != r or basis.row_len != d.row_len:
        raise ShapeMismatch("initial basis does not match rank / row length")

    def solve_all(current, warm):
        def one(k):
            return update_coefficients(series[k], current, lam, warm[k] if warm else None, opts.size_cap)

        return _map(one, list(range(len(series))), opts.threads)

    def total(current, cs):
        out = 0.0
        for y, c in zip(series, cs):
            fit_term, smooth = coefficient_terms(y, current, c)
            out += fit_term + lam * smooth
        return out

    coeffs = solve_all(basis, None)
    trace = [total(basis, coeffs)]
    converged = trace[0] == 0.0
    for it in range(opts.max_outer):
        if converged:
            break
        basis = update_basis(d, coeffs, previous=basis, lam=lam if opts.smooth_basis_step else 0.0)
        coeffs = solve_all(basis, coeffs)
        trace.append(total(basis, coeffs))
        prev, cur = trace[-2], trace[-1]
        log.debug("outer %d objective %.10g", it + 1, cur)
        if cur == 0.0 or (prev - cur) < opts.rel_tol * prev:
            converged = True
    return FactorModel(
        basis=basis,
        coeffs=tuple(coeffs),
        lam=float(lam),
        objective_trace=tuple(trace),
        converged=converged,
        seed=opts.seed,
    )
