"""Nonnegative quadratic programs.

Solves

    minimize  0.5 * x' Q x - b' x   subject to  x >= 0

for symmetric positive semidefinite ``Q`` (dense ndarray or scipy sparse).
The main engine is block principal pivoting (Judice & Pires; Kim & Park),
an exact active-set method: each iteration solves the unconstrained problem
on a passive set and exchanges every variable whose sign condition fails.
If the number of infeasible variables stops decreasing, it switches to a
primal active-set method (Lawson & Hanson) warm-started from the best
passive set seen; that phase decreases the objective monotonically and
cannot cycle.

A projected-gradient engine with the same exit test is provided for
problems too large for factorization.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceFailure, IllPosedSubproblem

__all__ = ["nnls_solve", "projected_gradient_solve", "kkt_violation", "SymBanded", "KKT_TOL"]

KKT_TOL = 1e-8
_EPS = np.finfo(float).eps


class SymBanded:
    """Symmetric band matrix in LAPACK lower storage: ``ab[k, j] = Q[j + k, j]``."""

    def __init__(self, ab):
        self.ab = np.asarray(ab, dtype=float)
        self.u = self.ab.shape[0] - 1
        self.n = self.ab.shape[1]

    @property
    def shape(self):
        return (self.n, self.n)

    def __matmul__(self, x):
        x = np.asarray(x, dtype=float)
        ab, n = self.ab, self.n
        y = ab[0] * x
        for k in range(1, min(self.u, n - 1) + 1):
            band = ab[k, : n - k]
            y[k:] += band * x[: n - k]
            y[: n - k] += band * x[k:]
        return y

    def __abs__(self):
        return SymBanded(np.abs(self.ab))

    def principal(self, idx) -> "SymBanded":
        """The submatrix ``Q[idx][:, idx]`` for increasing ``idx``; still banded."""
        idx = np.asarray(idx)
        m = idx.size
        out = np.zeros((min(self.u, max(m - 1, 0)) + 1, m))
        out[0] = self.ab[0, idx]
        for k in range(1, out.shape[0]):
            gap = idx[k:] - idx[:-k]
            ok = gap <= self.u
            vals = np.zeros(m - k)
            vals[ok] = self.ab[gap[ok], idx[:-k][ok]]
            out[k, : m - k] = vals
        return SymBanded(out)

    def solve(self, b):
        return scipy.linalg.solveh_banded(self.ab, b, lower=True, check_finite=False)

    def row_abs_sum(self):
        return abs(self) @ np.ones(self.n)

    def toarray(self):
        Q = np.diag(self.ab[0])
        for k in range(1, self.u + 1):
            if k < self.n:
                d = np.diag(self.ab[k, : self.n - k], -k)
                Q += d + d.T
        return Q


def _gradient_scale(Q, b, x):
    # per-coordinate magnitude of the terms summed in Qx - b; rounding noise is
    # proportional to it
    absQ = abs(Q) if (sp.issparse(Q) or isinstance(Q, SymBanded)) else np.abs(Q)
    return np.asarray(absQ @ np.abs(x)).ravel() + np.abs(b)


def kkt_violation(Q, b, x) -> tuple[float, float, float]:
    """Scaled KKT residuals ``(primal, dual, complementarity)``.

    With ``g = Qx - b`` and ``s_i = (|Q| |x|)_i + |b_i|`` this returns
    ``max(-x)``, ``max(-g_i / (1 + s_i))`` and
    ``|x' g| / (1 + |b' x| + s' x)``. For unit-scale problems these are the
    plain conditions ``x >= 0``, ``g >= 0`` and ``x' g = 0``; the scaling keeps
    the test meaningful when ``Q`` has entries of order 1e12.
    """
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    g = np.asarray(Q @ x).ravel() - b
    s = _gradient_scale(Q, b, x)
    primal = float(max(0.0, -x.min())) if x.size else 0.0
    dual = float(max(0.0, np.max(-g / (1.0 + s)))) if x.size else 0.0
    comp = abs(float(x @ g)) / (1.0 + abs(float(b @ x)) + float(s @ np.abs(x)))
    return primal, dual, comp


def _kkt_ok(Q, b, x, tol):
    return max(kkt_violation(Q, b, x)) <= tol


def _solve_dense(Qpp, bp):
    try:
        factor = scipy.linalg.cho_factor(Qpp, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(factor, bp, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    w = np.linalg.eigvalsh(Qpp)
    if w[0] < -1e-10 * max(1.0, abs(w[-1])):
        raise IllPosedSubproblem(f"matrix has negative curvature (eigenvalue {w[0]:.3g})")
    # singular PSD block: minimum-norm stationary point
    return np.linalg.lstsq(Qpp, bp, rcond=None)[0]


def _solve_sparse(Qpp, bp):
    try:
        lu = spla.splu(Qpp.tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0)
        return lu.solve(bp)
    except RuntimeError:
        return _solve_dense(Qpp.toarray(), bp)


def _solve_banded(Qpp, bp):
    try:
        return Qpp.solve(bp)
    except np.linalg.LinAlgError:
        return _solve_dense(Qpp.toarray(), bp)


def _principal_solve(Q, b, passive, kind):
    """x with x[~passive] = 0 and (Qx)[passive] = b[passive]; and g = Qx - b."""
    x = np.zeros_like(b)
    idx = np.flatnonzero(passive)
    if idx.size:
        bp = b[idx]
        if kind == "banded":
            xp = _solve_banded(Q.principal(idx), bp)
        elif kind == "sparse":
            xp = _solve_sparse(Q[idx][:, idx], bp)
        else:
            xp = _solve_dense(Q[np.ix_(idx, idx)], bp)
        curvature = float(xp @ bp)  # = xp' Qpp xp
        if curvature < -1e-10 * (1.0 + float(np.abs(xp) @ np.abs(bp))):
            raise IllPosedSubproblem("negative curvature along the working direction")
        x[idx] = xp
    g = np.asarray(Q @ x).ravel() - b
    g[idx] = 0.0
    return x, g


def nnls_solve(Q, b, x0=None, tol: float = KKT_TOL, max_iter: int | None = None) -> np.ndarray:
    """Solve ``min 0.5 x'Qx - b'x`` subject to ``x >= 0``.

    Parameters
    ----------
    Q : (d, d) ndarray, sparse matrix or SymBanded
        Symmetric positive semidefinite.
    b : (d,) array_like
    x0 : (d,) array_like, optional
        Warm start; its positive entries seed the passive set.
    tol : float
        Exit tolerance on the scaled KKT residuals (see :func:`kkt_violation`).
    max_iter : int, optional
        Pivoting budget, default ``10 * d + 50``.

    Returns
    -------
    x : (d,) ndarray
        Global minimizer (unique when ``Q`` is positive definite).

    Raises
    ------
    IllPosedSubproblem
        Negative curvature was found, i.e. ``Q`` is not PSD.
    """
    if isinstance(Q, SymBanded):
        kind = "banded"
    elif sp.issparse(Q):
        kind, Q = "sparse", Q.tocsr()
    else:
        kind, Q = "dense", np.asarray(Q, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    d = b.shape[0]
    if Q.shape != (d, d):
        raise ValueError(f"Q has shape {Q.shape}, expected {(d, d)}")
    if d == 0:
        return np.zeros(0)
    max_iter = 10 * d + 50 if max_iter is None else max_iter

    passive = np.zeros(d, dtype=bool) if x0 is None else np.asarray(x0, dtype=float).ravel() > 0
    best_count, best_passive = d + 1, passive.copy()
    backup_budget = 3
    for _ in range(max_iter):
        x, g = _principal_solve(Q, b, passive, kind)
        s = _gradient_scale(Q, b, x)
        noise = 1e3 * _EPS * s
        bad = (passive & (x < -noise)) | (~passive & (g < -noise))
        n_bad = int(np.count_nonzero(bad))
        if n_bad == 0:
            x = np.maximum(x, 0.0)
            if not _kkt_ok(Q, b, x, tol):
                raise ConvergenceFailure(f"pivoting ended without KKT point: {kkt_violation(Q, b, x)}")
            return x
        if n_bad < best_count:
            best_count, best_passive = n_bad, passive.copy()
            backup_budget = 3
        elif backup_budget > 0:
            backup_budget -= 1
        else:
            # block exchanges cycle; finish with monotone single exchanges
            return _active_set(Q, b, best_passive, kind, tol, max_iter)
        passive ^= bad
    return _active_set(Q, b, best_passive, kind, tol, max_iter)


def _active_set(Q, b, passive, kind, tol, max_iter):
    """Primal active-set method (Lawson & Hanson) from a guessed passive set.

    Iterates stay feasible and the objective never increases, so it cannot
    cycle the way sign-based exchanges can.
    """
    # any nonnegative point is feasible: start from the clipped passive-set solution
    x = np.maximum(_principal_solve(Q, b, passive, kind)[0], 0.0)
    passive = x > 0.0
    blocked = np.zeros(b.shape[0], dtype=bool)
    z = None
    for _ in range(max_iter):
        # move toward the passive-set solution, dropping variables that hit zero
        while True:
            if z is None:
                z, _ = _principal_solve(Q, b, passive, kind)
            neg = passive & (z <= 0.0)
            if not neg.any():
                x = z
                break
            step = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + step * (z - x)
            x[neg & (x <= _EPS * np.max(np.abs(x), initial=1.0))] = 0.0
            x[~passive] = 0.0
            passive &= x > 0.0
            z = None
        g = np.asarray(Q @ x).ravel() - b
        s = _gradient_scale(Q, b, x)
        cand = ~passive & ~blocked & (g < -tol * (1.0 + s))
        if not cand.any():
            break
        j = int(np.argmin(np.where(cand, g / (1.0 + s), np.inf)))
        trial = passive.copy()
        trial[j] = True
        z, _ = _principal_solve(Q, b, trial, kind)
        if z[j] <= 0.0:
            # round-off: the most attractive variable cannot enter
            blocked[j] = True
            z = None
            continue
        passive = trial
        blocked[:] = False
    else:
        raise ConvergenceFailure(f"active-set phase did not terminate in {max_iter} iterations")
    x = np.maximum(x, 0.0)
    if not _kkt_ok(Q, b, x, tol):
        raise ConvergenceFailure(f"active-set phase ended without KKT point: {kkt_violation(Q, b, x)}")
    return x


def projected_gradient_solve(
    Q, b, x0=None, tol: float = KKT_TOL, max_iter: int = 100_000
) -> np.ndarray:
    """Accelerated projected gradient for the same problem as :func:`nnls_solve`.

    Used when the problem is too large to factor. Exits on the same KKT test;
    raises ConvergenceFailure if ``max_iter`` is exhausted first.
    """
    if isinstance(Q, SymBanded):
        row_sums = Q.row_abs_sum()
    elif sp.issparse(Q):
        Q = Q.tocsr()
        row_sums = np.asarray(abs(Q).sum(axis=1)).ravel()
    else:
        Q = np.asarray(Q, dtype=float)
        row_sums = np.abs(Q).sum(axis=1)
    b = np.asarray(b, dtype=float).ravel()
    # Gershgorin bound on the largest eigenvalue
    lipschitz = float(np.max(row_sums)) if row_sums.size else 0.0
    if lipschitz <= 0.0:
        if np.any(b > 0):
            raise IllPosedSubproblem("zero quadratic term with positive linear term is unbounded")
        return np.zeros_like(b)
    step = 1.0 / lipschitz
    x = np.zeros_like(b) if x0 is None else np.maximum(np.asarray(x0, dtype=float).ravel(), 0.0)
    z, t = x.copy(), 1.0
    for k in range(max_iter):
        grad = np.asarray(Q @ z).ravel() - b
        x_new = np.maximum(z - step * grad, 0.0)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        # restart momentum when it points uphill
        if (z - x_new) @ (x_new - x) > 0:
            t_new, z = 1.0, x_new.copy()
        else:
            z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if k % 25 == 0 and _kkt_ok(Q, b, x, tol):
            return x
    if _kkt_ok(Q, b, x, tol):
        return x
    raise ConvergenceFailure(f"projected gradient did not reach KKT tolerance in {max_iter} iterations")

