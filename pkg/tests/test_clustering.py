import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from tslr.analytics import RAW, kmeans
from tslr.core import BasisSet, CoefficientSet, Dataset, FactorModel, SeriesMatrix
from tslr.errors import TooManyClusters


def coeff_model(trajs):
    coeffs = tuple(CoefficientSet(f"s{n}", days, vals) for n, (days, vals) in enumerate(trajs))
    r = coeffs[0].rank
    return FactorModel(BasisSet(np.eye(r, r + 1)), coeffs, 0.0)


def two_populations(rng, n=10, T=30, r=3, missing=0.0):
    trajs, truth = [], []
    for i in range(n):
        g = i % 2
        vals = rng.random((T, r)) * 0.1
        vals[:, 1] += 1.0 if g else 0.0
        keep = rng.random(T) >= missing
        keep[0] = True
        trajs.append((np.arange(1, T + 1)[keep], vals[keep]))
        truth.append(g)
    return coeff_model(trajs), np.array(truth)


class TestKMeans:
    def test_single_cluster_is_mean(self, rng):
        m, _ = two_populations(rng, missing=0.3)
        res = kmeans(m, 1, components=[0, 1, 2])
        assert np.all(res.labels == 0)
        for k, day in enumerate(res.days):
            vals = [c.values[list(c.days).index(day)] for c in m.coeffs if day in c.days]
            np.testing.assert_allclose(res.centroids[0, k], np.mean(vals, axis=0), rtol=1e-13)

    def test_planted_clusters(self, rng):
        m, truth = two_populations(rng, missing=0.3)
        res = kmeans(m, 2, components=[1], seed=3)
        assert adjusted_rand_score(truth, res.labels) == 1.0
        assert res.converged

    def test_other_component_cannot_separate(self, rng):
        m, truth = two_populations(rng, n=40)
        res = kmeans(m, 2, components=[0], seed=0)
        assert adjusted_rand_score(truth, res.labels) < 0.5

    def test_cost_non_increasing_on_complete_data(self, rng):
        m, _ = two_populations(rng, n=20)
        for seed in range(5):
            tr = np.array(kmeans(m, 3, seed=seed, restarts=1).cost_trace)
            assert np.all(np.diff(tr) <= 1e-12)

    def test_every_subject_labelled(self, rng):
        m, _ = two_populations(rng, n=9, missing=0.5)
        res = kmeans(m, 3)
        assert res.labels.shape == (9,)
        assert set(res.labels) <= {0, 1, 2}
        assert np.all(np.nan_to_num(res.centroids) >= 0)
        assert sum(len(res.members(c)) for c in range(3)) == 9

    def test_deterministic(self, rng):
        m, _ = two_populations(rng, missing=0.3)
        a, b = kmeans(m, 2, seed=11), kmeans(m, 2, seed=11)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert a.cost == b.cost

    def test_too_many(self, rng):
        m, _ = two_populations(rng, n=4)
        with pytest.raises(TooManyClusters):
            kmeans(m, 5)

    def test_raw_mode(self, rng):
        series, truth = [], []
        for i in range(12):
            g = i % 3
            vals = np.clip(0.3 * g + 0.05 * rng.random((20, 6)), 0, 1)
            vals[rng.random(20) < 0.3] = np.nan
            vals[0] = 0.3 * g
            series.append(SeriesMatrix(f"s{i}", vals))
            truth.append(g)
        res = kmeans(Dataset(tuple(series)), 3, seed=1)
        assert res.components == RAW
        assert adjusted_rand_score(truth, res.labels) == 1.0

    def test_raw_requires_dataset(self, rng):
        m, _ = two_populations(rng)
        with pytest.raises(TypeError):
            kmeans(m, 2, components=RAW)
