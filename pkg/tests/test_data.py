import io
import math

import numpy as np
import pytest

from localeb.data import (
    adapt_asos_file,
    compute_increments,
    effect_estimate,
    parse_snapshot_file,
    reference_effect,
    write_snapshot_csv,
)
from localeb.errors import InsufficientDataError, ParseError, ValidationError

from conftest import CANONICAL_TEXT, series_from_grid, series_from_units


class TestParse:
    def test_two_snapshots_one_series(self, canonical_series):
        assert len(canonical_series) == 1
        series = canonical_series[0]
        assert series.experiment_id == "exp1"
        assert series.n_snapshots == 2
        assert series.horizon_days == 1.0
        assert series.snapshots[0].control.count == 10
        assert series.snapshots[1].treatment.mean == 1.4

    def test_decreasing_count_rejected(self):
        text = CANONICAL_TEXT.replace("exp1,m1,1.0,c,30", "exp1,m1,1.0,c,9")
        with pytest.raises(ValidationError, match="exp1"):
            parse_snapshot_file(io.StringIO(text))

    def test_header_only_is_empty(self):
        out = parse_snapshot_file(io.StringIO(CANONICAL_TEXT.splitlines()[0] + "\n"))
        assert out == []

    def test_malformed_row_reports_line(self):
        text = CANONICAL_TEXT + "exp1,m1,2.0,c,not_a_number,1.0,1.0\n"
        with pytest.raises(ParseError, match="line 6"):
            parse_snapshot_file(io.StringIO(text))

    def test_missing_arm_rejected(self):
        text = CANONICAL_TEXT + "exp1,m1,2.0,c,40,1.5,0.6\n"
        with pytest.raises(ValidationError, match="missing arm"):
            parse_snapshot_file(io.StringIO(text))

    def test_bad_header_rejected(self):
        with pytest.raises(ParseError, match="header"):
            parse_snapshot_file(io.StringIO("a,b,c\n1,2,3\n"))

    def test_bad_arm_rejected(self):
        text = CANONICAL_TEXT.replace("exp1,m1,0.5,c", "exp1,m1,0.5,x")
        with pytest.raises(ParseError, match="arm"):
            parse_snapshot_file(io.StringIO(text))

    def test_roundtrip_through_writer(self, canonical_series, tmp_path):
        path = tmp_path / "canonical.csv"
        write_snapshot_csv(canonical_series, path)
        again = parse_snapshot_file(path)
        assert again == canonical_series

    def test_accepts_bytes(self):
        out = parse_snapshot_file(io.BytesIO(CANONICAL_TEXT.encode()))
        assert len(out) == 1


class TestIncrements:
    def test_basic_deltas(self):
        series = series_from_grid([1, 2], counts_c=[5, 15], counts_t=[5, 15])
        intervals = compute_increments(series)
        assert [iv.arrivals_total for iv in intervals] == [10, 20]
        assert [iv.width for iv in intervals] == [1.0, 1.0]
        assert intervals[0].start == 0.0  # implicit origin

    def test_zero_arrival_interval_allowed(self):
        series = series_from_grid([1, 2], counts_c=[5, 5], counts_t=[5, 5])
        intervals = compute_increments(series)
        assert intervals[1].arrivals_total == 0
        assert math.isnan(intervals[1].mean_control)

    def test_moment_differencing_closed_form(self):
        # cumulative means 1.0 -> 1.5 with counts 10 -> 30 on one arm
        series = series_from_grid(
            [1, 2], counts_c=[10, 30], counts_t=[10, 30],
            means_c=[1.0, 1.5], means_t=[1.0, 1.5],
        )
        intervals = compute_increments(series)
        assert intervals[1].mean_control == pytest.approx((30 * 1.5 - 10 * 1.0) / 20)
        assert intervals[1].mean_control == pytest.approx(1.75)

    def test_moment_differencing_matches_unit_level_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            k = int(rng.integers(2, 6))
            units_c = [rng.normal(rng.normal(), 1.5, size=rng.integers(2, 40)) for _ in range(k)]
            units_t = [rng.normal(rng.normal(), 1.5, size=rng.integers(2, 40)) for _ in range(k)]
            series = series_from_units(units_c, units_t)
            intervals = compute_increments(series)
            for iv, uc, ut in zip(intervals, units_c, units_t):
                assert iv.mean_control == pytest.approx(np.mean(uc), rel=1e-9)
                assert iv.mean_treatment == pytest.approx(np.mean(ut), rel=1e-9)
                assert iv.variance_control == pytest.approx(np.var(uc, ddof=1), rel=1e-7, abs=1e-9)
                assert iv.variance_treatment == pytest.approx(np.var(ut, ddof=1), rel=1e-7, abs=1e-9)

    def test_pooled_mean_roundtrip(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            k = int(rng.integers(2, 7))
            counts = np.cumsum(rng.integers(1, 50, size=k))
            means = rng.normal(size=k)
            series = series_from_grid(
                list(range(1, k + 1)), counts_c=counts, counts_t=counts,
                means_c=means, means_t=means,
            )
            intervals = compute_increments(series)
            # pooling reconstructed interval means recovers the cumulative mean
            w = np.array([iv.arrivals_control for iv in intervals], dtype=float)
            m = np.array([iv.mean_control for iv in intervals])
            mask = w > 0
            pooled = (w[mask] * m[mask]).sum() / w[mask].sum()
            assert pooled == pytest.approx(means[-1], rel=1e-10)

    def test_arrival_sum_matches_final_count(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            k = int(rng.integers(2, 8))
            cc = np.cumsum(rng.integers(0, 30, size=k))
            ct = np.cumsum(rng.integers(0, 30, size=k))
            series = series_from_grid(np.arange(1, k + 1) * 0.5, cc, ct)
            intervals = compute_increments(series)
            assert sum(iv.arrivals_total for iv in intervals) == cc[-1] + ct[-1]

    def test_negative_variance_clamped_and_tallied(self):
        # inconsistent cumulative variances force a negative reconstruction
        series = series_from_grid(
            [1, 2], counts_c=[10, 20], counts_t=[10, 20],
            means_c=[0.0, 0.0], means_t=[0.0, 0.0],
            vars_c=[5.0, 0.1], vars_t=[5.0, 0.1],
        )
        tally = {}
        intervals = compute_increments(series, tally)
        assert intervals[1].variance_control == 0.0
        assert tally["clamped_negative_variance"] == 2


class TestEffects:
    def test_direct_formula(self):
        series = series_from_grid(
            [0.5, 1], counts_c=[40, 100], counts_t=[40, 100],
            means_c=[0.8, 0.8], means_t=[1.0, 1.0], vars_c=[1.0, 1.0], vars_t=[1.0, 1.0],
        )
        est = effect_estimate(series, 1)
        assert est.y == pytest.approx(0.2)
        assert est.v == pytest.approx(0.02)

    def test_identical_arms_zero(self):
        series = series_from_grid([1, 2], counts_c=[20, 50], counts_t=[20, 50])
        assert effect_estimate(series, 1).y == 0.0

    def test_unbalanced_counts(self):
        series = series_from_grid(
            [1, 2], counts_c=[100, 400], counts_t=[40, 100],
            means_c=[0.0, 0.0], means_t=[0.0, 0.0], vars_c=[2.0, 2.0], vars_t=[2.0, 2.0],
        )
        assert effect_estimate(series, 1).v == pytest.approx(0.02 + 0.005)

    def test_insufficient_counts_error(self):
        series = series_from_grid([1, 2], counts_c=[0, 1], counts_t=[50, 100])
        with pytest.raises(InsufficientDataError):
            effect_estimate(series, 1)

    def test_invariant_under_zero_arrival_extension(self):
        base = series_from_grid(
            [1, 2], counts_c=[10, 30], counts_t=[10, 30],
            means_c=[1.0, 1.2], means_t=[1.5, 1.9],
        )
        extended = series_from_grid(
            [1, 2, 3], counts_c=[10, 30, 30], counts_t=[10, 30, 30],
            means_c=[1.0, 1.2, 1.2], means_t=[1.5, 1.9, 1.9],
        )
        assert effect_estimate(extended, 2) == effect_estimate(base, 1)


class TestReferenceEffect:
    def test_final_snapshot_difference(self):
        series = series_from_grid(
            [1, 2], counts_c=[10, 30], counts_t=[10, 30],
            means_c=[1.0, 1.0], means_t=[1.3, 2.0],
        )
        assert reference_effect(series) == pytest.approx(1.0)

    def test_single_interval_identity(self):
        # explicit origin snapshot at t=0 plus one data snapshot: one interval
        series = series_from_grid([0, 1], counts_c=[0, 30], counts_t=[0, 30],
                                  means_c=[0.0, 1.0], means_t=[0.0, 1.4],
                                  vars_c=[0.0, 1.0], vars_t=[0.0, 1.0])
        assert len(compute_increments(series)) == 1
        assert reference_effect(series) == effect_estimate(series, 1).y

    def test_interim_values_ignored(self):
        series = series_from_grid(
            [1, 2], counts_c=[10, 100], counts_t=[10, 100],
            means_c=[0.0, 0.0], means_t=[0.5, 0.1],
        )
        assert effect_estimate(series, 0).y == pytest.approx(0.5)
        assert reference_effect(series) == pytest.approx(0.1)

    def test_equals_last_effect_estimate(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            k = int(rng.integers(2, 6))
            counts = np.cumsum(rng.integers(5, 40, size=k)) + 2
            series = series_from_grid(
                np.arange(1, k + 1), counts, counts,
                means_c=rng.normal(size=k), means_t=rng.normal(size=k),
            )
            assert reference_effect(series) == effect_estimate(series, k - 1).y


class TestAsosAdapter:
    ASOS_TEXT = (
        "experiment_id,variant_id,metric_id,time_since_start,"
        "count_c,mean_c,variance_c,count_t,mean_t,variance_t\n"
        "e1,v1,m2,12,10,1.0,0.5,12,1.1,0.55\n"
        "e1,v1,m2,24,30,1.5,0.6,28,1.4,0.5\n"
    )

    def test_wide_to_canonical_with_hours(self):
        series = adapt_asos_file(io.StringIO(self.ASOS_TEXT), time_unit="hours")
        assert len(series) == 1
        assert series[0].snapshots[0].time_days == pytest.approx(0.5)
        assert series[0].snapshots[1].treatment.count == 28

    def test_missing_column_rejected(self):
        with pytest.raises(ParseError, match="ASOS column"):
            adapt_asos_file(io.StringIO("a,b\n1,2\n"))


def test_single_snapshot_series_rejected():
    with pytest.raises(ValidationError, match="at least 2"):
        series_from_grid([1], counts_c=[10], counts_t=[10])


def test_non_monotone_time_rejected():
    with pytest.raises(ValidationError, match="strictly increasing"):
        series_from_grid([1, 1], counts_c=[10, 20], counts_t=[10, 20])
