"""Synthetic cohorts with known factors, and small brute-force oracles.

Basis functions are raised-cosine bumps. In the default mode each bump
lives in its own slice of the period so the functions have disjoint
supports (orthogonal, hence identifiable). Coefficients are smooth sigmoid
ramps or decays. Amplitudes are chosen so the noiseless data never leaves
[0, 1] and clamping only ever acts on noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import BasisSet, CoefficientSet, Dataset, FactorModel, SeriesMatrix
from .errors import InfeasibleSpec

__all__ = [
    "SynthSpec",
    "GroundTruth",
    "RecoveryError",
    "generate",
    "sleep_like",
    "recovery_error",
    "affine_fit_oracle",
]


@dataclass(frozen=True)
class SynthSpec:
    N: int = 20
    T: int = 200
    ell: int = 48
    r: int = 3
    noise_std: float = 0.0
    missing_fraction: float = 0.0
    seed: int = 0
    overlap: bool = False
    # subjects are split round-robin into this many groups whose trajectories
    # of ``planted_component`` come from different families
    planted_groups: int = 1
    planted_component: int = 1

    def __post_init__(self):
        if min(self.N, self.T, self.r) < 1:
            raise InfeasibleSpec("N, T and r must be positive")
        if self.ell < 2:
            raise InfeasibleSpec("ell must be >= 2")
        if self.r > self.ell:
            raise InfeasibleSpec(f"rank {self.r} exceeds row length {self.ell}")
        if not 0.0 <= self.missing_fraction < 1.0:
            raise InfeasibleSpec("missing_fraction must lie in [0, 1)")
        if self.noise_std < 0:
            raise InfeasibleSpec("noise_std must be nonnegative")
        if self.planted_groups not in (1, 2):
            raise InfeasibleSpec("planted_groups must be 1 or 2")
        if self.planted_groups > 1 and not 0 <= self.planted_component < self.r:
            raise InfeasibleSpec("planted_component out of range")


def sleep_like(N: int = 100, seed: int = 0, **kw) -> SynthSpec:
    """Dimensions of the infant-sleep cohort: 144 ten-minute samples, ~2 years."""
    kw.setdefault("noise_std", 0.05)
    kw.setdefault("missing_fraction", 0.3)
    return SynthSpec(N=N, T=700, ell=144, r=5, seed=seed, **kw)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    basis: BasisSet
    coeffs: tuple[CoefficientSet, ...]
    clean: Dataset
    data: Dataset
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def as_model(self, lam: float = 0.0) -> FactorModel:
        """The truth restricted to observed days, in model form."""
        coeffs = []
        for c, y in zip(self.coeffs, self.data):
            keep = np.isin(c.days, y.days)
            coeffs.append(CoefficientSet(c.subject_id, c.days[keep], c.values[keep]))
        return FactorModel(self.basis, tuple(coeffs), lam)


def _bump(length):
    i = np.arange(1, length + 1)
    return np.sin(np.pi * i / (length + 1)) ** 2


def _separated_basis(ell, r, rng):
    seg = ell // r
    if seg < 3:
        raise InfeasibleSpec(f"{r} separated bumps need ell >= {3 * r}, got {ell}")
    F = np.zeros((r, ell))
    for j in range(r):
        width = int(rng.integers(max(2, seg // 2), seg))
        offset = j * seg + int(rng.integers(0, seg - width + 1))
        F[j, offset : offset + width] = _bump(width)
    return F / np.linalg.norm(F, axis=1, keepdims=True)


def _overlapping_basis(ell, r, rng):
    i = np.arange(ell)
    centers = np.sort(rng.uniform(0, ell, size=r))
    widths = rng.uniform(ell / (4 * r), ell / r, size=r)
    F = np.exp(-0.5 * ((i[None, :] - centers[:, None]) / widths[:, None]) ** 2)
    return F / np.linalg.norm(F, axis=1, keepdims=True)


def _trajectory(T, rng, direction=None):
    """Smooth sigmoid ramp (up) or decay (down) between two plateaus.

    The cubic smoothstep is exactly flat outside its transition window and
    the low plateau is zero for at least a tenth of the horizon. Zero
    plateaus in every component are what make the nonnegative factorization
    identifiable.
    """
    t = np.arange(1, T + 1)
    t0 = rng.uniform(0.3 * T, 0.7 * T)
    half = rng.uniform(T / 20, T / 5)
    s = direction if direction is not None else rng.choice([-1.0, 1.0])
    u = np.clip((s * (t - t0) + half) / (2 * half), 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def generate(spec: SynthSpec) -> GroundTruth:
    """Draw a synthetic cohort from ``spec`` (deterministic per seed)."""
    rng = np.random.default_rng(spec.seed)
    F = _overlapping_basis(spec.ell, spec.r, rng) if spec.overlap else _separated_basis(spec.ell, spec.r, rng)
    amp = 0.9 / F.max(axis=1)
    if spec.overlap:
        amp = amp / spec.r
    days = np.arange(1, spec.T + 1)
    width = len(str(spec.N))
    coeffs, clean, noisy = [], [], []
    labels = np.arange(spec.N) % spec.planted_groups
    for n in range(spec.N):
        sid = f"s{n + 1:0{width}d}"
        C = np.empty((spec.T, spec.r))
        for j in range(spec.r):
            direction = None
            if spec.planted_groups > 1 and j == spec.planted_component:
                direction = 1.0 if labels[n] == 0 else -1.0
            C[:, j] = amp[j] * _trajectory(spec.T, rng, direction)
        Y = C @ F
        if spec.noise_std > 0:
            Y_obs = np.clip(Y + spec.noise_std * rng.standard_normal(Y.shape), 0.0, 1.0)
        else:
            Y_obs = np.clip(Y, 0.0, 1.0)
        keep = rng.random(spec.T) >= spec.missing_fraction
        if not keep.any():
            keep[rng.integers(spec.T)] = True
        Y_obs[~keep] = np.nan
        coeffs.append(CoefficientSet(sid, days, C))
        clean.append(SeriesMatrix(sid, np.clip(Y, 0.0, 1.0)))
        noisy.append(SeriesMatrix(sid, Y_obs))
    return GroundTruth(
        basis=BasisSet(F),
        coeffs=tuple(coeffs),
        clean=Dataset(tuple(clean)),
        data=Dataset(tuple(noisy)),
        labels=labels,
    )


@dataclass(frozen=True)
class RecoveryError:
    basis_err: np.ndarray
    coeff_err: np.ndarray
    # permutation[j] = learned component matched to true component j
    permutation: np.ndarray


def match_components(learned: np.ndarray, true: np.ndarray) -> np.ndarray:
    """Assignment of learned to true functions maximizing total inner product."""
    rows, cols = linear_sum_assignment(-(true @ learned.T))
    perm = np.empty(true.shape[0], dtype=int)
    perm[rows] = cols
    return perm


def recovery_error(m: FactorModel, gt: GroundTruth) -> RecoveryError:
    """Compare a fitted model with the generating factors.

    Components are matched by maximal total inner product of the basis
    functions. Coefficient error is relative, per component, on days the model
    has coefficients for, after a least-squares scale alignment.
    """
    F_hat, F = m.basis.functions, gt.basis.functions
    if F_hat.shape != F.shape:
        raise ValueError("model and truth have different rank or row length")
    perm = match_components(F_hat, F)
    basis_err = np.linalg.norm(F_hat[perm] - F, axis=1)

    truth = {c.subject_id: c for c in gt.coeffs}
    est_parts, true_parts = [], []
    for c in m.coeffs:
        tc = truth[c.subject_id]
        common, i_est, i_true = np.intersect1d(c.days, tc.days, return_indices=True)
        est_parts.append(c.values[i_est][:, perm])
        true_parts.append(tc.values[i_true])
    est = np.vstack(est_parts)
    tru = np.vstack(true_parts)
    coeff_err = np.empty(F.shape[0])
    for j in range(F.shape[0]):
        e, t = est[:, j], tru[:, j]
        ee = e @ e
        s = (e @ t) / ee if ee > 0 else 0.0
        denom = np.linalg.norm(t)
        coeff_err[j] = np.linalg.norm(s * e - t) / denom if denom > 0 else np.linalg.norm(s * e)
    return RecoveryError(basis_err, coeff_err, perm)


def affine_fit_oracle(y, nonneg: bool = False) -> np.ndarray:
    """Least-squares affine fit of a sequence, optionally constrained >= 0.

    An affine sequence is nonnegative iff both endpoints are, so the
    constrained fit is a 2-variable problem in the endpoint values, solved by
    enumerating which endpoints sit on the boundary.
    """
    y = np.asarray(y, dtype=float)
    m = y.shape[0]
    if m < 2:
        raise ValueError("need at least 2 samples")
    t = np.arange(m, dtype=float)
    A = np.column_stack([(m - 1 - t) / (m - 1), t / (m - 1)])
    uv = np.linalg.lstsq(A, y, rcond=None)[0]
    if not nonneg or np.all(uv >= 0):
        return A @ uv
    best, best_sse = np.zeros(m), float(y @ y)
    for col in (0, 1):
        a = A[:, col]
        v = max((a @ y) / (a @ a), 0.0)
        fitted = v * a
        sse = float(np.sum((y - fitted) ** 2))
        if sse < best_sse:
            best, best_sse = fitted, sse
    return best
