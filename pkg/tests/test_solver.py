import numpy as np
import pytest
import scipy.optimize

from tslr.core import BasisSet, CoefficientSet, Dataset, FactorModel, SeriesMatrix
from tslr.errors import EmptyDataset, RankExceedsData, ShapeMismatch
from tslr.nnls import nnls_solve
from tslr.solver import (
    FitOptions,
    coefficient_terms,
    fit,
    init_basis,
    objective,
    second_difference,
    second_difference_matrix,
    singular_spectrum,
    update_basis,
    update_coefficients,
)
from tslr.synth import SynthSpec, affine_fit_oracle, generate


def unit_basis(ell, idx):
    F = np.zeros((len(idx), ell))
    F[np.arange(len(idx)), idx] = 1.0
    return BasisSet(F)


def dense_qp(Y, F, lam):
    """Stacked coefficient QP built from explicit Kronecker products."""
    m, r = Y.shape[0], F.shape[0]
    D = second_difference_matrix(m).toarray()
    Q = np.kron(np.eye(m), F @ F.T) + lam * np.kron(D.T @ D, np.eye(r))
    return Q, (Y @ F.T).ravel()


def small_series(rng, T=12, ell=6, missing=()):
    vals = rng.random((T, ell)) * 0.8
    vals[list(missing)] = np.nan
    return SeriesMatrix("s", vals)


class TestSecondDifference:
    def test_ramp(self):
        np.testing.assert_array_equal(second_difference([1, 2, 3, 4]), [0, 0])

    def test_stencil(self):
        np.testing.assert_array_equal(second_difference([0, 1, 0]), [-2])

    def test_short(self):
        assert second_difference([1.0, 2.0]).size == 0

    def test_matrix_oracle(self, rng):
        c = rng.standard_normal(10)
        D = np.zeros((8, 10))
        for k in range(8):
            D[k, k : k + 3] = [1, -2, 1]
        np.testing.assert_allclose(second_difference(c), D @ c)
        np.testing.assert_allclose(second_difference_matrix(10).toarray(), D)


class TestNNLSExamples:
    def test_separable_clamp(self):
        np.testing.assert_array_equal(nnls_solve(np.eye(2), np.array([1.0, -1.0])), [1.0, 0.0])

    def test_feasible_optimum(self, rng):
        b = rng.random(4)
        np.testing.assert_allclose(nnls_solve(np.eye(4), b), b)


class TestCoefficientUpdate:
    def test_banded_matches_dense_oracle(self, rng):
        y = small_series(rng, missing=[2, 7])
        F = BasisSet.normalized(rng.random((3, 6)))
        for lam in (0.0, 3.0, 1e4):
            c = update_coefficients(y, F, lam)
            Q, b = dense_qp(y.observed_values, F.functions, lam)
            np.testing.assert_allclose(c.values.ravel(), nnls_solve(Q, b), atol=1e-9)

    def test_unit_vector_basis_recovers_column(self, rng):
        vals = rng.random((9, 5)) * 0.9
        c = update_coefficients(SeriesMatrix("s", vals), unit_basis(5, [0]), 0.0)
        np.testing.assert_allclose(c.values[:, 0], vals[:, 0], atol=1e-12)

    def test_indexed_by_observed_days(self, rng):
        y = small_series(rng, missing=[0, 5])
        c = update_coefficients(y, BasisSet.normalized(rng.random((2, 6))), 1.0)
        np.testing.assert_array_equal(c.days, y.days)
        assert np.all(c.values >= 0)

    def test_huge_lambda_is_affine(self):
        t = np.arange(20)
        col = 0.2 + 0.5 * np.abs(np.sin(t / 3.0))
        vals = np.zeros((20, 4))
        vals[:, 0] = col
        c = update_coefficients(SeriesMatrix("s", vals), unit_basis(4, [0]), 1e12)
        np.testing.assert_allclose(c.values[:, 0], affine_fit_oracle(col, nonneg=True), rtol=1e-3)

    def test_subproblem_optimality(self, rng):
        y = small_series(rng)
        F = BasisSet.normalized(rng.random((2, 6)))
        lam = 10.0
        c = update_coefficients(y, F, lam)

        def value(v):
            fit_term, smooth = coefficient_terms(y, F, CoefficientSet("s", y.days, v))
            return fit_term + lam * smooth

        base = value(c.values)
        for _ in range(50):
            step = rng.standard_normal(c.values.shape) * 1e-4
            trial = np.maximum(c.values + step, 0.0)
            assert value(trial) >= base - 1e-10

    def test_row_length_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            update_coefficients(small_series(rng), BasisSet.normalized(rng.random((2, 5))), 0.0)

    def test_size_cap_uses_projected_gradient(self, rng):
        y = small_series(rng, T=30)
        F = BasisSet.normalized(rng.random((2, 6)) + 0.1)
        exact = update_coefficients(y, F, 1.0)
        approx = update_coefficients(y, F, 1.0, size_cap=10)
        np.testing.assert_allclose(approx.values, exact.values, atol=1e-5)


class TestBasisUpdate:
    def test_recovers_rank_one_pattern(self, rng):
        pattern = rng.random(8)
        coef = rng.random(15) + 0.1
        Y = np.outer(coef, pattern)
        Y /= Y.max()
        d = Dataset((SeriesMatrix("s", Y),))
        c = CoefficientSet("s", np.arange(1, 16), (coef / (np.outer(coef, pattern).max()))[:, None])
        F = update_basis(d, [c])
        np.testing.assert_allclose(F.functions[0], pattern / np.linalg.norm(pattern), atol=1e-10)

    def test_columnwise_matches_scipy_nnls(self, rng):
        d = Dataset((small_series(rng),))
        c = CoefficientSet("s", d[0].days, rng.random((12, 2)))
        F = update_basis(d, [c])
        C, Y = c.values, d[0].observed_values
        raw = np.column_stack([scipy.optimize.nnls(C, Y[:, i])[0] for i in range(Y.shape[1])])
        np.testing.assert_allclose(F.functions, raw / np.linalg.norm(raw, axis=1, keepdims=True), atol=1e-9)

    def test_unit_norm_and_nonnegative(self, rng):
        d = Dataset((small_series(rng),))
        F = update_basis(d, [CoefficientSet("s", d[0].days, rng.random((12, 3)))])
        assert np.all(F.functions >= 0)
        np.testing.assert_allclose(np.linalg.norm(F.functions, axis=1), 1.0, atol=1e-12)

    def test_collapsed_function_reseeded(self, rng):
        d = Dataset((small_series(rng),))
        vals = rng.random((12, 2))
        vals[:, 1] = 0.0
        F = update_basis(d, [CoefficientSet("s", d[0].days, vals)])
        assert np.linalg.norm(F.functions[1]) == pytest.approx(1.0)


class TestObjective:
    def test_triple_loop_oracle(self, rng):
        gt = generate(SynthSpec(N=3, T=15, ell=6, r=2, noise_std=0.05, missing_fraction=0.2, seed=4))
        m = fit(gt.data, r=2, lam=7.0, opts=FitOptions(max_outer=3))
        total = 0.0
        for y, c in zip(gt.data, m.coeffs):
            Y = y.observed_values
            for t in range(Y.shape[0]):
                for i in range(Y.shape[1]):
                    pred = sum(c.values[t, j] * m.basis.functions[j, i] for j in range(2))
                    total += (Y[t, i] - pred) ** 2
            for j in range(2):
                for k in range(len(c.days) - 2):
                    total += 7.0 * (c.values[k + 2, j] - 2 * c.values[k + 1, j] + c.values[k, j]) ** 2
        assert objective(gt.data, m) == pytest.approx(total, rel=1e-12)

    def test_zero_coefficients_give_data_energy(self, rng):
        d = Dataset((small_series(rng),))
        F = BasisSet.normalized(rng.random((2, 6)))
        m = FactorModel(F, (CoefficientSet("s", d[0].days, np.zeros((12, 2))),), 5.0)
        assert objective(d, m) == pytest.approx(np.sum(d[0].observed_values ** 2))

    def test_misaligned(self, rng):
        d = Dataset((small_series(rng),))
        F = BasisSet.normalized(rng.random((2, 6)))
        m = FactorModel(F, (CoefficientSet("other", d[0].days, np.zeros((12, 2))),), 0.0)
        with pytest.raises(ShapeMismatch):
            objective(d, m)


class TestInitAndSpectrum:
    def test_rank_one_init(self, rng):
        pattern = rng.random(6) + 0.1
        Y = np.outer(rng.random(20) + 0.1, pattern)
        d = Dataset((SeriesMatrix("s", Y / Y.max()),))
        F = init_basis(d, 1)
        np.testing.assert_allclose(F.functions[0], pattern / np.linalg.norm(pattern), atol=1e-6)

    def test_rank_too_large(self, rng):
        with pytest.raises(RankExceedsData):
            init_basis(Dataset((small_series(rng),)), 7)

    def test_init_beats_random(self):
        wins = []
        for seed in range(20):
            gt = generate(SynthSpec(N=4, T=30, ell=12, r=3, noise_std=0.02, seed=seed))
            d = gt.data
            errs = []
            for F in (init_basis(d, 3, seed=seed), BasisSet.normalized(np.random.default_rng(seed).random((3, 12)))):
                errs.append(sum(coefficient_terms(y, F, update_coefficients(y, F, 0.0))[0] for y in d))
            wins.append(errs[0] - errs[1])
        assert np.median(wins) <= 0

    def test_identity_spectrum(self):
        d = Dataset((SeriesMatrix("s", np.eye(3)),))
        np.testing.assert_allclose(singular_spectrum(d, 3), [1, 1, 1])

    def test_rank_two_spectrum(self, rng):
        a, b = np.zeros(8), np.zeros(8)
        a[:4], b[4:] = 0.5, 0.5
        Y = np.outer(rng.random(30), a) + np.outer(rng.random(30), b)
        sv = singular_spectrum(Dataset((SeriesMatrix("s", Y),)), 4)
        assert sv[2] <= 1e-8 * sv[0] and sv[3] <= 1e-8 * sv[0]

    def test_spectrum_matches_numpy(self, rng):
        d = Dataset((small_series(rng, T=40),))
        np.testing.assert_allclose(singular_spectrum(d, 6), np.linalg.svd(d.stacked(), compute_uv=False), rtol=1e-10)

    def test_k_too_large(self, rng):
        with pytest.raises(RankExceedsData):
            singular_spectrum(Dataset((small_series(rng),)), 7)


class TestFit:
    def test_empty(self):
        with pytest.raises(EmptyDataset):
            fit(Dataset(()))

    def test_noiseless_rank_two(self):
        gt = generate(SynthSpec(N=5, T=40, ell=16, r=2, seed=1))
        m = fit(gt.data, r=2, lam=0.0, opts=FitOptions(max_outer=200, rel_tol=0.0))
        assert m.objective_trace[-1] <= 1e-8 * m.objective_trace[0]

    def test_trace_monotone_and_constraints(self):
        gt = generate(SynthSpec(N=6, T=40, ell=12, r=3, noise_std=0.05, missing_fraction=0.3, seed=2))
        m = fit(gt.data, r=3, lam=1e3, opts=FitOptions(max_outer=30))
        tr = np.array(m.objective_trace)
        assert np.all(tr[1:] <= tr[:-1] * (1 + 1e-10))
        assert np.all(m.basis.functions >= 0)
        assert all(np.all(c.values >= 0) for c in m.coeffs)

    def test_deterministic(self):
        gt = generate(SynthSpec(N=4, T=30, ell=10, r=2, noise_std=0.05, seed=3))
        a = fit(gt.data, r=2, lam=10.0, opts=FitOptions(seed=5))
        b = fit(gt.data, r=2, lam=10.0, opts=FitOptions(seed=5))
        assert a.objective_trace == b.objective_trace

    def test_threads_do_not_change_result(self):
        gt = generate(SynthSpec(N=6, T=30, ell=10, r=2, noise_std=0.05, seed=3))
        a = fit(gt.data, r=2, lam=10.0, opts=FitOptions(threads=1))
        b = fit(gt.data, r=2, lam=10.0, opts=FitOptions(threads=4))
        assert a.objective_trace == b.objective_trace

    def test_missing_row_indifference(self):
        gt = generate(SynthSpec(N=3, T=25, ell=8, r=2, noise_std=0.05, seed=6))
        padded = []
        for y in gt.data:
            vals = np.vstack([y.values, np.full((1, 8), np.nan)])
            vals = np.insert(vals, 3, np.nan, axis=0)
            padded.append(SeriesMatrix(y.subject_id, vals))
        a = fit(gt.data, r=2, lam=10.0)
        b = fit(gt.data.replace(padded), r=2, lam=10.0)
        assert a.objective_trace == b.objective_trace
        np.testing.assert_array_equal(a.basis.functions, b.basis.functions)

    def test_plain_nmf_objective_when_unregularized(self):
        gt = generate(SynthSpec(N=1, T=20, ell=8, r=2, noise_std=0.05, seed=8))
        m = fit(gt.data, r=2, lam=0.0, opts=FitOptions(max_outer=5))
        C, F, Y = m.coeffs[0].values, m.basis.functions, gt.data[0].observed_values
        assert m.objective_trace[-1] == pytest.approx(np.sum((Y - C @ F) ** 2), rel=1e-12)

    def test_initial_basis_shape_checked(self, rng):
        gt = generate(SynthSpec(N=2, T=10, ell=8, r=2, seed=0))
        with pytest.raises(ShapeMismatch):
            fit(gt.data, r=2, basis=BasisSet.normalized(rng.random((3, 8))))

    def test_lambda_monotone_subproblem(self, rng):
        y = small_series(rng, T=25)
        F = BasisSet.normalized(rng.random((2, 6)))
        terms = [coefficient_terms(y, F, update_coefficients(y, F, lam)) for lam in (0, 10, 1e3, 1e5, 1e6)]
        fits, smooth = np.array(terms).T
        assert np.all(np.diff(smooth) <= 1e-9 * (1 + smooth[:-1]))
        assert np.all(np.diff(fits) >= -1e-9 * (1 + fits[:-1]))
