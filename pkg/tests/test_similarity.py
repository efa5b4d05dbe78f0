import itertools
import math

import numpy as np
import pytest

from localeb.errors import DegenerateSeriesError
from localeb.similarity import (
    DistanceNormalizers,
    ProcessFeatures,
    SimilarityConfig,
    composite_distance,
    distance_normalizers,
    dtw_distance,
    dtw_matrix,
    normalized_shape,
    pairwise_distance_matrix,
    piecewise_shape_on_grid,
)

from conftest import series_from_grid


def dtw_unconstrained_oracle(x, y):
    """Plain-Python full DP over monotone warping paths (no band).

    Uses native floats and explicit multiplication for the squared cost so
    arithmetic is plain IEEE double (numpy's scalar power can differ by an
    ulp), making bit-exact comparison against the banded kernel meaningful.
    """
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    n = len(x)
    inf = float("inf")
    d = [[inf] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            diff = x[i] - y[j]
            c = diff * diff
            if i == 0 and j == 0:
                d[i][j] = c
                continue
            best = inf
            if i > 0:
                best = min(best, d[i - 1][j])
            if j > 0:
                best = min(best, d[i][j - 1])
            if i > 0 and j > 0:
                best = min(best, d[i - 1][j - 1])
            d[i][j] = c + best
    return d[n - 1][n - 1]


def dtw_path_enumeration_oracle(x, y):
    """Exhaustive enumeration of monotone warping paths (tiny inputs only)."""
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    n = len(x)
    best = [math.inf]

    def walk(i, j, cost):
        diff = x[i] - y[j]
        cost += diff * diff
        if cost >= best[0]:
            return
        if i == n - 1 and j == n - 1:
            best[0] = cost
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < n:
                walk(i + di, j + dj, cost)

    walk(0, 0, 0.0)
    return best[0]


def make_features(shape, n):
    return ProcessFeatures(shape=np.asarray(shape, dtype=float), n=n, log_n=math.log(n))


class TestNormalizedShape:
    def test_two_interval_density(self):
        # arrivals [10, 20] over unit intervals: density 2/3 then 4/3
        series = series_from_grid([1, 2], counts_c=[5, 15], counts_t=[5, 15])
        values, n = piecewise_shape_on_grid(series, grid_size=10)
        assert n == 30
        assert values[:5] == pytest.approx([2.0 / 3.0] * 5)
        assert values[5:] == pytest.approx([4.0 / 3.0] * 5)

    def test_smoothed_riemann_sum_is_one(self):
        series = series_from_grid([1, 2], counts_c=[5, 15], counts_t=[5, 15])
        feats = normalized_shape(series, SimilarityConfig(grid_size=200))
        assert feats.shape.mean() == pytest.approx(1.0, abs=1e-12)
        # away from the step and the boundary the density is preserved
        assert feats.shape[40] == pytest.approx(2.0 / 3.0, rel=1e-3)
        assert feats.shape[160] == pytest.approx(4.0 / 3.0, rel=1e-3)

    def test_uniform_series_is_constant_one(self):
        counts = np.arange(1, 6) * 10
        series = series_from_grid(np.arange(1, 6), counts, counts)
        feats = normalized_shape(series, SimilarityConfig(grid_size=100))
        assert feats.shape == pytest.approx(np.ones(100), abs=1e-12)

    def test_single_burst_concentrates(self):
        counts_half = [0, 0, 25, 25, 25]
        series = series_from_grid(np.arange(1, 6), counts_half, counts_half)
        feats = normalized_shape(series, SimilarityConfig(grid_size=500))
        assert feats.shape.mean() == pytest.approx(1.0, abs=1e-9)
        burst = feats.shape[200:300].sum() / 500
        assert burst > 0.8  # nearly all mass in the burst interval

    def test_moving_average_smoother(self):
        counts = np.arange(1, 6) * 10
        series = series_from_grid(np.arange(1, 6), counts, counts)
        config = SimilarityConfig(grid_size=100, smoother="moving_average", ma_window=9)
        feats = normalized_shape(series, config)
        assert feats.shape.mean() == pytest.approx(1.0, abs=1e-12)

    def test_zero_arrivals_rejected(self):
        series = series_from_grid([1, 2], counts_c=[0, 0], counts_t=[0, 0])
        with pytest.raises(DegenerateSeriesError):
            normalized_shape(series, SimilarityConfig())

    def test_total_arrivals_recorded(self):
        series = series_from_grid([1, 2], counts_c=[5, 15], counts_t=[5, 15])
        feats = normalized_shape(series, SimilarityConfig(grid_size=50))
        assert feats.n == 30
        assert feats.log_n == pytest.approx(math.log(30))


class TestDtw:
    def test_identical_sequences_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.random(30)
            assert dtw_distance(x, x, 0.1) == 0.0

    def test_constant_offset_pair(self):
        # all paths cost 2 for [0,0] vs [1,1]
        assert dtw_distance(np.zeros(2), np.ones(2), 1.0) == pytest.approx(2.0)
        assert dtw_path_enumeration_oracle([0.0, 0.0], [1.0, 1.0]) == pytest.approx(2.0)

    def test_zero_band_is_pointwise(self):
        rng = np.random.default_rng(1)
        x, y = rng.random(20), rng.random(20)
        assert dtw_distance(x, y, 0.0) == pytest.approx(float(((x - y) ** 2).sum()))

    def test_full_band_matches_bruteforce(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = int(rng.integers(1, 51))
            x, y = rng.random(n), rng.random(n)
            assert dtw_distance(x, y, 1.0) == dtw_unconstrained_oracle(list(x), list(y))

    def test_enumeration_agrees_with_dp(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            n = int(rng.integers(1, 7))
            x, y = rng.random(n), rng.random(n)
            assert dtw_distance(x, y, 1.0) == pytest.approx(
                dtw_path_enumeration_oracle(list(x), list(y)), rel=1e-12
            )

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = int(rng.integers(2, 40))
            x, y = rng.random(n), rng.random(n)
            alpha = float(rng.random())
            assert dtw_distance(x, y, alpha) == dtw_distance(y, x, alpha)

    def test_band_monotonicity(self):
        rng = np.random.default_rng(5)
        alphas = [0.0, 0.05, 0.1, 0.25, 0.5, 1.0]
        for _ in range(20):
            n = int(rng.integers(2, 40))
            x, y = rng.random(n), rng.random(n)
            costs = [dtw_distance(x, y, a) for a in alphas]
            assert all(c1 >= c2 - 1e-15 for c1, c2 in zip(costs, costs[1:]))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            dtw_distance(np.zeros(3), np.zeros(4), 0.1)


class TestNormalizers:
    def test_median_and_mad(self):
        # shapes [1,1],[0,2],[2,0] have pairwise DTW {2, 2, 8}; log n {1, 2, 4}
        feats = [
            make_features([1.0, 1.0], math.e),
            make_features([0.0, 2.0], math.e**2),
            make_features([2.0, 0.0], math.e**4),
        ]
        norms = distance_normalizers(feats, band_fraction=1.0)
        assert norms.med_dtw == pytest.approx(2.0)
        assert norms.mad_log_n == pytest.approx(1.0)

    def test_all_equal_traffic_floored(self):
        feats = [make_features([1.0, 1.0], 10.0) for _ in range(3)]
        norms = distance_normalizers(feats, band_fraction=1.0)
        assert norms.mad_log_n == 1e-12
        assert norms.med_dtw == 1e-12  # identical shapes floor the DTW median too

    def test_needs_two_experiments(self):
        with pytest.raises(ValueError):
            distance_normalizers([make_features([1.0, 1.0], 10.0)], 0.1)


class TestCompositeDistance:
    NORMS = DistanceNormalizers(med_dtw=2.0, mad_log_n=1.0)

    def test_identical_features_zero(self):
        f = make_features([1.0, 1.0], 10.0)
        assert composite_distance(f, f, 0.75, self.NORMS) == 0.0

    def test_rho_one_is_shape_only(self):
        a = make_features([1.0, 1.0], 10.0)
        b = make_features([0.0, 2.0], 99.0)
        d = composite_distance(a, b, 1.0, self.NORMS, band_fraction=1.0)
        assert d == pytest.approx(2.0 / 2.0)

    def test_unit_scale_case(self):
        # both components at their normalizer scale with rho = 0.75 -> 1.0
        a = make_features([1.0, 1.0], math.e)
        b = make_features([0.0, 2.0], math.e**2)
        norms = DistanceNormalizers(med_dtw=2.0, mad_log_n=1.0)
        assert composite_distance(a, b, 0.75, norms, band_fraction=1.0) == pytest.approx(1.0)


class TestPairwiseMatrix:
    def test_identical_pair_is_zero_matrix(self):
        series = series_from_grid([1, 2], counts_c=[5, 15], counts_t=[5, 15])
        config = SimilarityConfig(grid_size=50)
        feats = [normalized_shape(series, config) for _ in range(2)]
        matrix, _ = pairwise_distance_matrix(feats, config)
        assert matrix == pytest.approx(np.zeros((2, 2)))

    def test_symmetry_and_consistency(self):
        rng = np.random.default_rng(6)
        feats = []
        for _ in range(4):
            shape = rng.random(30) + 0.1
            shape = shape / shape.mean()
            feats.append(make_features(shape, float(rng.uniform(10, 1e4))))
        config = SimilarityConfig(grid_size=30, band_fraction=0.2)
        matrix, norms = pairwise_distance_matrix(feats, config)
        assert np.array_equal(matrix, matrix.T)
        assert np.all(np.diag(matrix) == 0.0)
        for i, j in itertools.combinations(range(4), 2):
            direct = composite_distance(feats[i], feats[j], 0.75, norms, band_fraction=0.2)
            assert matrix[i, j] == pytest.approx(direct, rel=1e-12)

    def test_three_experiments_three_distances(self):
        rng = np.random.default_rng(7)
        feats = []
        for _ in range(3):
            shape = rng.random(20) + 0.5
            feats.append(make_features(shape / shape.mean(), float(rng.uniform(10, 100))))
        config = SimilarityConfig(grid_size=20)
        matrix, _ = pairwise_distance_matrix(feats, config)
        off_diag = {matrix[i, j] for i, j in itertools.combinations(range(3), 2)}
        assert len(off_diag) == 3


def test_dtw_matrix_zero_diagonal():
    rng = np.random.default_rng(8)
    shapes = [rng.random(15) for _ in range(3)]
    m = dtw_matrix(shapes, 0.3)
    assert np.all(np.diag(m) == 0)
    assert np.array_equal(m, m.T)


def test_shape_riemann_validation():
    with pytest.raises(ValueError, match="Riemann"):
        make_features([2.0, 2.0], 10.0)
