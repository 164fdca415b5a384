import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import dtw_bruteforce, pearson
from mafrg.errors import DataError
from mafrg.seqmetrics import (
    DtwConfig,
    GaussianSummary,
    ccc,
    ccc_channels,
    dtw,
    fit_gaussian,
    frechet_distance,
    lagged_correlation,
    tlcc_offset,
)

FULL = DtwConfig(band_radius=None)


class TestDtw:
    def test_identity_is_zero(self, rng):
        a = rng.random((30, 5))
        assert dtw(a, a, FULL) == 0.0

    def test_constant_offset_pair(self):
        assert dtw([[0.0], [0.0]], [[1.0], [1.0]], FULL) == pytest.approx(2.0, abs=1e-12)

    def test_duplicate_frame_alignment(self):
        assert dtw([[0.0], [1.0], [2.0]], [[0.0], [1.0], [1.0], [2.0]], FULL) == 0.0

    def test_symmetry_and_nonnegativity(self, rng):
        for _ in range(10):
            a = rng.random((rng.integers(2, 12), 3))
            b = rng.random((rng.integers(2, 12), 3))
            d = dtw(a, b, FULL)
            assert d >= 0.0
            assert d == pytest.approx(dtw(b, a, FULL), abs=1e-12)

    def test_matches_bruteforce_enumeration(self, rng):
        for _ in range(60):
            a = rng.random((int(rng.integers(1, 8)), int(rng.integers(1, 4))))
            b = rng.random((a.shape[0] if rng.random() < 0.2 else int(rng.integers(1, 8)),
                            a.shape[1]))
            assert dtw(a, b, FULL) == pytest.approx(dtw_bruteforce(a, b), abs=1e-9)

    def test_band_never_beats_full(self, rng):
        for _ in range(10):
            a = rng.random((20, 4))
            b = rng.random((20, 4))
            full = dtw(a, b, FULL)
            for radius in (0, 2, 5, 19):
                assert dtw(a, b, DtwConfig(band_radius=radius)) >= full - 1e-12

    def test_band_too_narrow_errors(self, rng):
        a, b = rng.random((10, 2)), rng.random((4, 2))
        with pytest.raises(DataError, match="radius 2"):
            dtw(a, b, DtwConfig(band_radius=2))

    def test_manhattan_cost(self):
        a = np.array([[0.0, 0.0]])
        b = np.array([[0.3, 0.4]])
        assert dtw(a, b, DtwConfig(local_cost="manhattan")) == pytest.approx(0.7)
        assert dtw(a, b, FULL) == pytest.approx(0.5)

    def test_path_normalize(self, rng):
        a, b = rng.random((6, 2)), rng.random((9, 2))
        raw = dtw(a, b, FULL)
        normalized = dtw(a, b, DtwConfig(band_radius=None, path_normalize=True))
        assert normalized == pytest.approx(raw / 15.0)

    def test_rejects_channel_mismatch(self, rng):
        with pytest.raises(DataError, match="channel mismatch"):
            dtw(rng.random((4, 2)), rng.random((4, 3)))

    def test_rejects_nonfinite(self):
        with pytest.raises(DataError, match="non-finite"):
            dtw([[np.nan]], [[0.0]])


class TestCcc:
    def test_self_is_one(self, rng):
        x = rng.random(50)
        assert ccc(x, x) == 1.0

    def test_perfect_discordance(self):
        assert ccc([0, 1, 2], [2, 1, 0]) == pytest.approx(-1.0, abs=1e-12)

    def test_mean_shift(self):
        assert ccc([1, 2, 3, 4], [2, 3, 4, 5]) == pytest.approx(2.5 / 3.5, abs=1e-12)

    def test_constant_conventions(self):
        assert ccc([0.3, 0.3, 0.3], [0.3, 0.3, 0.3]) == 1.0
        assert ccc([0.3, 0.3, 0.3], [0.4, 0.4, 0.4]) == 0.0

    def test_shifted_copy_below_one(self, rng):
        x = rng.random(100)
        assert ccc(x, x + 0.5) < 1.0

    def test_symmetry(self, rng):
        for _ in range(20):
            x, y = rng.random(30), rng.random(30)
            assert ccc(x, y) == pytest.approx(ccc(y, x), abs=1e-12)

    def test_bounded_by_pearson(self, rng):
        for _ in range(50):
            x, y = rng.standard_normal(40), rng.standard_normal(40)
            assert abs(ccc(x, y)) <= abs(pearson(x, y)) + 1e-12

    def test_affine_invariance(self, rng):
        x, y = rng.random(60), rng.random(60)
        base = ccc(x, y)
        assert ccc(3.0 * x + 2.0, 3.0 * y + 2.0) == pytest.approx(base, abs=1e-9)

    def test_rejects_length_mismatch(self):
        with pytest.raises(DataError):
            ccc([1, 2], [1, 2, 3])

    @settings(max_examples=50, deadline=None, derandomize=True)
    @given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=2, max_size=40),
           st.lists(st.floats(-1, 1, allow_nan=False), min_size=2, max_size=40))
    def test_range_and_symmetry_property(self, xs, ys):
        n = min(len(xs), len(ys))
        x, y = np.array(xs[:n]), np.array(ys[:n])
        v = ccc(x, y)
        assert -1.0 <= v <= 1.0
        assert v == ccc(y, x)

    def test_channelwise_matches_scalar(self, rng):
        a, b = rng.random((40, 25)), rng.random((40, 25))
        a[:, 3] = 0.25  # one constant channel on each side
        b[:, 7] = 0.5
        b[:, 3] = 0.25
        vec = ccc_channels(a, b)
        for c in range(25):
            assert vec[c] == pytest.approx(ccc(a[:, c], b[:, c]), abs=1e-12)
        assert vec[3] == 1.0  # constant and equal


class TestLaggedCorrelation:
    def test_zero_lag_self(self, rng):
        x = np.cumsum(rng.standard_normal(100))
        assert lagged_correlation(x, x, 0) == pytest.approx(1.0, abs=1e-12)

    def test_constant_is_zero_everywhere(self, rng):
        x = rng.random(50)
        y = np.full(50, 0.7)
        for lag in (-10, -1, 0, 1, 10):
            assert lagged_correlation(x, y, lag) == 0.0

    def test_shift_peak_location(self, rng):
        x = np.cumsum(rng.standard_normal(300))
        y = np.empty_like(x)
        y[:5] = x[0]
        y[5:] = x[:-5]
        values = {lag: lagged_correlation(x, y, lag) for lag in range(-20, 21)}
        assert max(values, key=values.get) == 5

    def test_rejects_big_lag(self, rng):
        x = rng.random(10)
        with pytest.raises(DataError):
            lagged_correlation(x, x, 10)

    def test_rejects_short_overlap(self, rng):
        x = rng.random(10)
        with pytest.raises(DataError, match="overlap"):
            lagged_correlation(x, x, 9)


class TestTlccOffset:
    def test_self_zero(self, rng):
        x = np.cumsum(rng.standard_normal(200))
        assert tlcc_offset(x, x, 49) == 0

    def test_constant_saturates(self, rng):
        x = np.cumsum(rng.standard_normal(200))
        assert tlcc_offset(x, np.full(200, 0.5), 49) == 49
        assert tlcc_offset(np.full(200, 0.5), x, 49) == 49

    @pytest.mark.parametrize("k", [1, 3, 7, 20])
    def test_recovers_shift(self, rng, k):
        x = np.cumsum(rng.standard_normal(400))
        y = np.empty_like(x)
        y[:k] = x[0]
        y[k:] = x[:-k]
        assert tlcc_offset(x, y, 49) == k

    def test_matches_argmax_of_lagged_correlation(self, rng):
        for _ in range(10):
            x = np.cumsum(rng.standard_normal(120))
            y = np.cumsum(rng.standard_normal(120))
            max_lag = 15
            best = max(
                ((lag, lagged_correlation(x, y, lag)) for lag in range(-max_lag, max_lag + 1)),
                key=lambda lv: (lv[1], -abs(lv[0])))
            assert tlcc_offset(x, y, max_lag) == abs(best[0])

    def test_tie_breaks_toward_smaller_lag(self):
        # integer-valued period-4 signal: correlation is exactly 1.0 at lags 0 and +-4
        x = np.tile(np.array([0.0, 1.0, 0.0, -1.0]), 10)
        assert tlcc_offset(x, x, 6) == 0

    def test_rejects_max_lag_too_large(self, rng):
        with pytest.raises(DataError):
            tlcc_offset(rng.random(10), rng.random(10), 10)


class TestGaussianFit:
    def test_identical_samples(self):
        g = fit_gaussian(np.tile([1.0, 2.0], (5, 1)))
        assert np.allclose(g.mean, [1.0, 2.0])
        assert np.allclose(g.covariance, 0.0)

    def test_one_dimensional_population_moments(self):
        g = fit_gaussian(np.array([[0.0], [2.0]]))
        assert g.mean[0] == 1.0
        assert g.covariance[0, 0] == 1.0
        assert g.count == 2

    def test_axis_aligned(self):
        samples = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        g = fit_gaussian(samples)
        assert np.allclose(g.mean, 0.0)
        assert np.allclose(g.covariance, np.diag([0.5, 0.5]))

    def test_rejects_single_sample(self):
        with pytest.raises(DataError):
            fit_gaussian(np.array([[1.0, 2.0]]))

    def test_summary_rejects_asymmetry(self):
        with pytest.raises(DataError, match="asymmetry"):
            GaussianSummary(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), 2)


def summary_1d(mu, var):
    return GaussianSummary(np.array([mu]), np.array([[var]]), 2)


class TestFrechetDistance:
    def test_identical_is_zero(self, rng):
        g = fit_gaussian(rng.random((50, 4)))
        assert frechet_distance(g, g) == pytest.approx(0.0, abs=1e-9)

    def test_one_dimensional_closed_form(self):
        assert frechet_distance(summary_1d(0.0, 1.0), summary_1d(1.0, 4.0)) \
            == pytest.approx(2.0, abs=1e-12)

    def test_closed_form_random(self, rng):
        for _ in range(30):
            mu1, mu2 = rng.normal(size=2)
            s1, s2 = rng.uniform(0.1, 3.0, size=2)
            expected = (mu1 - mu2) ** 2 + (math.sqrt(s1) - math.sqrt(s2)) ** 2
            got = frechet_distance(summary_1d(mu1, s1), summary_1d(mu2, s2))
            assert got == pytest.approx(expected, abs=1e-9)

    def test_diagonal_decomposes(self, rng):
        mus = rng.normal(size=(2, 3))
        vars_ = rng.uniform(0.1, 2.0, size=(2, 3))
        g1 = GaussianSummary(mus[0], np.diag(vars_[0]), 2)
        g2 = GaussianSummary(mus[1], np.diag(vars_[1]), 2)
        expected = sum(
            (mus[0][d] - mus[1][d]) ** 2
            + (math.sqrt(vars_[0][d]) - math.sqrt(vars_[1][d])) ** 2
            for d in range(3))
        assert frechet_distance(g1, g2) == pytest.approx(expected, abs=1e-9)

    def test_symmetry(self, rng):
        g1 = fit_gaussian(rng.random((40, 5)))
        g2 = fit_gaussian(rng.random((60, 5)) + 0.2)
        assert frechet_distance(g1, g2) == pytest.approx(frechet_distance(g2, g1),
                                                         rel=1e-9, abs=1e-12)

    def test_dimension_mismatch(self, rng):
        g1 = fit_gaussian(rng.random((10, 2)))
        g2 = fit_gaussian(rng.random((10, 3)))
        with pytest.raises(DataError, match="dimension mismatch"):
            frechet_distance(g1, g2)

    def test_negative_definite_covariance_rejected(self):
        bad = GaussianSummary(np.zeros(1), np.array([[-1.0]]), 2)
        good = summary_1d(0.0, 1.0)
        with pytest.raises(DataError):
            frechet_distance(bad, good)
