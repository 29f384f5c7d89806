"""Feature engineering: cleaning thresholds, hourly aggregation, table invariants."""

from __future__ import annotations

from datetime import timedelta

import numpy as np
import pandas as pd
import pytest

from boardcast.errors import DataGapError, DuplicateKeyError
from boardcast.features import (
    FEATURE_COLUMNS,
    aggregate_hour,
    build_feature_table,
    clean_encounters,
    exclude_window,
    extreme_indicator,
    read_features,
    rows_to_table,
    validate_feature_table,
    write_features,
)
from boardcast.scenario import ContextRecord, EncounterRecord, InpatientEvent
from boardcast.timeutils import HOUR, utc


def visit(n, arrival, wait_min=10.0, treat_min=30.0, board_min=None, esi=3):
    """Build one encounter from durations in minutes; board_min=None means not admitted."""
    treatment_start = arrival + timedelta(minutes=wait_min)
    if board_min is None:
        return EncounterRecord(
            patient_id=f"P{n:04d}", visit_id=f"V{n:04d}", esi=esi,
            arrival_ts=arrival, treatment_start_ts=treatment_start,
            bed_request_ts=None, checkout_ts=treatment_start + timedelta(minutes=treat_min),
        )
    bed_request = treatment_start + timedelta(minutes=treat_min)
    return EncounterRecord(
        patient_id=f"P{n:04d}", visit_id=f"V{n:04d}", esi=esi,
        arrival_ts=arrival, treatment_start_ts=treatment_start,
        bed_request_ts=bed_request, checkout_ts=bed_request + timedelta(minutes=board_min),
    )


def context_hours(start, n):
    return [
        ContextRecord(hour_ts=start + i * HOUR, temperature=60.0,
                      weather_category="clear", holiday=0, football_a=0, football_b=0)
        for i in range(n)
    ]


T0 = utc(2022, 3, 1)


class TestCleanEncounters:
    def test_wait_boundary(self):
        kept, report = clean_encounters([visit(1, T0, wait_min=540.0), visit(2, T0, wait_min=541.0)])
        assert [v.visit_id for v in kept] == ["V0001"]
        assert report.n_dropped_waiting == 1
        assert report.n_kept == 1

    def test_boarding_boundary_strict(self):
        kept, report = clean_encounters([
            visit(1, T0, board_min=18_000.0),   # exactly 300 h: kept
            visit(2, T0, board_min=18_001.0),   # strictly over: dropped
        ])
        assert [v.visit_id for v in kept] == ["V0001"]
        assert report.n_dropped_boarding == 1

    def test_planted_anomalies(self):
        records = [visit(i, T0 + timedelta(minutes=i), wait_min=30.0) for i in range(988)]
        records += [visit(1000 + i, T0, wait_min=600.0) for i in range(12)]
        kept, report = clean_encounters(records)
        assert report.n_input == 1000
        assert report.n_kept == len(kept) == 988
        assert report.n_dropped_waiting == 12
        assert report.dropped_fraction_waiting == pytest.approx(1.2)

    def test_order_preserved_and_totals_add_up(self):
        records = [visit(i, T0 + timedelta(minutes=i)) for i in range(20)]
        kept, report = clean_encounters(records)
        assert kept == records
        assert report.n_input == report.n_kept + report.n_dropped_waiting + report.n_dropped_boarding

    def test_thresholds_exact_property(self):
        # kept <=> wait <= 540 and board <= 18000, over randomized durations.
        rng = np.random.default_rng(5)
        records = []
        for i in range(500):
            wait = float(rng.uniform(500, 580))
            board = float(rng.uniform(17_900, 18_100)) if rng.random() < 0.5 else 100.0
            records.append(visit(i, T0 + timedelta(seconds=int(i)), wait_min=wait, board_min=board))
        kept, _ = clean_encounters(records)
        kept_ids = {v.visit_id for v in kept}
        for rec in records:
            wait = (rec.treatment_start_ts - rec.arrival_ts).total_seconds() / 60
            board = (rec.checkout_ts - rec.bed_request_ts).total_seconds() / 60
            assert (rec.visit_id in kept_ids) == (wait <= 540.0 and board <= 18_000.0)


class TestAggregateHour:
    def test_empty_hour_is_all_zero(self):
        row = aggregate_hour([], [], context_hours(T0, 1), T0)
        assert row.total_patient_count_hourly == 0
        assert row.boarding_time_minute_hourly == 0.0
        assert row.waiting_time_minute_hourly == 0.0
        assert row.treatment_time_minute_hourly == 0.0
        assert row.weather_clear == 1

    def test_boarding_elapsed_mean(self):
        # Two boarders, 120 and 60 minutes elapsed at the hour's end snapshot.
        hour_end = T0 + HOUR
        recs = [
            visit(1, hour_end - timedelta(minutes=140), wait_min=10, treat_min=10, board_min=600),
            visit(2, hour_end - timedelta(minutes=80), wait_min=10, treat_min=10, board_min=600),
        ]
        row = aggregate_hour(recs, [], context_hours(T0, 1), T0)
        assert row.boarding_count_hourly == 2
        assert row.boarding_time_minute_hourly == pytest.approx(90.0, abs=1e-9)

    def test_esi_partition(self):
        hour_end = T0 + HOUR
        recs = [
            visit(1, hour_end - timedelta(minutes=60), wait_min=5, treat_min=5, board_min=600, esi=2),
            visit(2, hour_end - timedelta(minutes=60), wait_min=5, treat_min=5, board_min=600, esi=4),
        ]
        row = aggregate_hour(recs, [], context_hours(T0, 1), T0)
        assert row.boarding_count_esi12_hourly == 1
        assert row.boarding_count_esi45_hourly == 1
        assert row.boarding_count_esi3_hourly == 0
        assert (
            row.boarding_count_esi12_hourly
            + row.boarding_count_esi3_hourly
            + row.boarding_count_esi45_hourly
            == row.boarding_count_hourly
        )

    def test_snapshot_membership_at_hour_end(self):
        hour_end = T0 + HOUR
        recs = [
            # Still waiting at the snapshot: treatment starts after hour end.
            visit(1, hour_end - timedelta(minutes=30), wait_min=45, treat_min=30),
            # In treatment at the snapshot.
            visit(2, hour_end - timedelta(minutes=30), wait_min=5, treat_min=60),
            # Checked out before the snapshot: not present.
            visit(3, hour_end - timedelta(minutes=50), wait_min=5, treat_min=10),
        ]
        row = aggregate_hour(recs, [], context_hours(T0, 1), T0)
        assert row.waiting_count_hourly == 1
        assert row.treatment_count_hourly == 1
        assert row.total_patient_count_hourly == 2
        assert row.waiting_time_minute_hourly == pytest.approx(30.0)

    def test_census_and_surgical_counts(self):
        events = [
            InpatientEvent("admission", T0 - timedelta(hours=2), "unit-1"),
            InpatientEvent("admission", T0 + timedelta(minutes=10), "unit-2"),
            InpatientEvent("discharge", T0 + timedelta(minutes=20), "unit-1"),
            InpatientEvent("surgery_start", T0 + timedelta(minutes=30), "or-1"),
            InpatientEvent("surgery_end", T0 + timedelta(hours=3), "or-1"),
        ]
        row = aggregate_hour([], events, context_hours(T0, 1), T0)
        assert row.census_count_hourly == 1
        assert row.surgical_count_hourly == 1

    def test_missing_context_names_hour(self):
        with pytest.raises(DataGapError) as err:
            aggregate_hour([], [], context_hours(T0, 1), T0 + HOUR)
        assert "2022-03-01T01:00:00Z" in str(err.value)

    def test_purity_bit_identical(self, small_corpus):
        ctx = small_corpus.context
        a = aggregate_hour(small_corpus.encounters, small_corpus.inpatient, ctx, ctx[5].hour_ts)
        b = aggregate_hour(small_corpus.encounters, small_corpus.inpatient, ctx, ctx[5].hour_ts)
        assert a == b


class TestExcludeWindow:
    def make_table(self, start, hours):
        ctx = context_hours(start, hours)
        return build_feature_table([], [], ctx, start, start + hours * HOUR, exclusions=())

    def test_table_before_window_unchanged(self):
        table = self.make_table(utc(2020, 1, 1), 48)
        out = exclude_window(table, utc(2020, 4, 1), utc(2020, 7, 1))
        pd.testing.assert_frame_equal(out, table)

    def test_rows_inside_window_removed(self):
        table = self.make_table(utc(2020, 4, 10), 24)
        out = exclude_window(table, utc(2020, 4, 1), utc(2020, 7, 1))
        assert len(out) == 0

    def test_covid_window_is_2184_hours(self):
        # Calendar oracle: April + May + June 2020 = (30 + 31 + 30) * 24 = 2184.
        assert (utc(2020, 7, 1) - utc(2020, 4, 1)) // HOUR == 2184
        table = self.make_table(utc(2019, 1, 1), 4 * 8760)  # four 365-day years
        out = exclude_window(table, utc(2020, 4, 1), utc(2020, 7, 1))
        assert len(table) - len(out) == 2184


class TestExtremeIndicator:
    def test_strict_threshold(self, small_table):
        table = small_table.copy()
        table.loc[table.index[0], "boarding_time_minute_hourly"] = 919.0
        table.loc[table.index[1], "boarding_time_minute_hourly"] = 918.0
        out = extreme_indicator(table, 622.0, 296.0)
        assert out["extreme_boarding_indicator"].iloc[0] == 1
        assert out["extreme_boarding_indicator"].iloc[1] == 0

    def test_all_zero_series(self):
        ctx = context_hours(T0, 3)
        rows = [aggregate_hour([], [], ctx, T0 + i * HOUR) for i in range(3)]
        out = extreme_indicator(rows_to_table(rows), 0.0, 0.0)
        assert (out["extreme_boarding_indicator"] == 0).all()


class TestBuildFeatureTable:
    def test_48_hour_range(self, small_corpus):
        start = small_corpus.config.start_ts
        table = build_feature_table(
            small_corpus.encounters, small_corpus.inpatient, small_corpus.context,
            start, start + 48 * HOUR,
        )
        assert len(table) == 48
        assert list(table.columns) == ["hour_ts"] + FEATURE_COLUMNS

    def test_duplicate_context_hour_rejected(self, small_corpus):
        ctx = list(small_corpus.context)
        ctx.append(ctx[0])
        with pytest.raises(DuplicateKeyError):
            build_feature_table(
                small_corpus.encounters, small_corpus.inpatient, ctx,
                small_corpus.config.start_ts, small_corpus.config.start_ts + 24 * HOUR,
            )

    def test_invariant_sweep_on_seeded_corpus(self, small_table):
        validate_feature_table(small_table)
        w = small_table
        assert (
            w["waiting_count_hourly"] + w["treatment_count_hourly"] + w["boarding_count_hourly"]
            == w["total_patient_count_hourly"]
        ).all()
        values = w[FEATURE_COLUMNS].to_numpy(dtype=float)
        assert np.isfinite(values).all()

    def test_exclusion_leaves_recorded_gap(self, small_corpus):
        start = small_corpus.config.start_ts
        gap = (start + 10 * HOUR, start + 15 * HOUR)
        table = build_feature_table(
            small_corpus.encounters, small_corpus.inpatient, small_corpus.context,
            start, start + 48 * HOUR, exclusions=(gap,),
        )
        assert len(table) == 43
        hours = set(table["hour_ts"])
        assert pd.Timestamp(gap[0]) not in hours
        validate_feature_table(table)


class TestFeatureCsv:
    def test_lossless_round_trip(self, small_table, tmp_path):
        path = tmp_path / "features.csv"
        write_features(small_table, path)
        loaded = read_features(path)
        pd.testing.assert_frame_equal(loaded, small_table, check_exact=True)
