"""Splitting, scaling, and window extraction against brute-force oracles."""

from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest

from boardcast.dataset import (
    ScalerParams,
    SplitSpec,
    WindowSpec,
    apply_scaler,
    chronological_split,
    fit_scaler,
    fit_scaler_tolerant,
    invert_scaler,
    load_windows,
    make_windows,
    save_windows,
)
from boardcast.errors import DegenerateColumnError, SchemaMismatchError, ValidationError
from boardcast.features import BINARY_COLUMNS, TARGET_COLUMN
from boardcast.timeutils import HOUR, utc


def toy_table(n_rows: int, keep_hours=None, seed: int = 0) -> pd.DataFrame:
    """A tiny sorted hourly table with one target and two extra channels.

    keep_hours selects a subset of hour offsets, creating gaps.
    """
    rng = np.random.default_rng(seed)
    offsets = list(range(n_rows)) if keep_hours is None else sorted(keep_hours)
    start = utc(2022, 1, 1)
    return pd.DataFrame(
        {
            "hour_ts": pd.to_datetime([start + i * HOUR for i in offsets], utc=True),
            TARGET_COLUMN: rng.normal(600, 100, len(offsets)),
            "census_count_hourly": rng.integers(100, 300, len(offsets)).astype(np.int64),
            "holiday": rng.integers(0, 2, len(offsets)).astype(np.int64),
        }
    )


def brute_force_window_count(offsets: list[int], lag: int, horizon: int) -> int:
    """Oracle: a window at origin t is valid iff hours t-lag+1 .. t+horizon all exist."""
    present = set(offsets)
    count = 0
    for t in offsets:
        span = range(t - lag + 1, t + horizon + 1)
        if all(s in present for s in span):
            count += 1
    return count


class TestChronologicalSplit:
    def test_100_rows(self):
        table = toy_table(100)
        train, val, test = chronological_split(table, SplitSpec())
        assert (len(train), len(val), len(test)) == (70, 15, 15)

    def test_10_rows_floor_remainder_to_test(self):
        train, val, test = chronological_split(toy_table(10), SplitSpec())
        assert (len(train), len(val), len(test)) == (7, 1, 2)

    def test_partition_identity(self):
        table = toy_table(57)
        train, val, test = chronological_split(table, SplitSpec())
        recombined = pd.concat([train, val, test], ignore_index=True)
        pd.testing.assert_frame_equal(recombined, table, check_exact=True)

    def test_strictly_ordered(self):
        train, val, test = chronological_split(toy_table(50), SplitSpec())
        assert train["hour_ts"].max() < val["hour_ts"].min() < test["hour_ts"].min()

    def test_too_short(self):
        with pytest.raises(ValidationError):
            chronological_split(toy_table(2), SplitSpec())

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            chronological_split(toy_table(10), SplitSpec(0.7, 0.2, 0.2))


class TestScaler:
    def test_population_convention(self):
        table = toy_table(3)
        table[TARGET_COLUMN] = [1.0, 2.0, 3.0]
        params = fit_scaler(table)
        mean, std = params.column_stats(TARGET_COLUMN)
        assert mean == pytest.approx(2.0)
        assert std == pytest.approx(math.sqrt(2.0 / 3.0))  # divide-by-n convention

    def test_binary_columns_pass_through(self):
        table = toy_table(40)
        params = fit_scaler(table)
        assert params.is_exempt("holiday")
        out = apply_scaler(table, params)
        assert np.array_equal(out["holiday"].to_numpy(), table["holiday"].to_numpy())

    def test_train_only_dependence(self):
        table = toy_table(60)
        train, val, test = chronological_split(table, SplitSpec())
        params = fit_scaler(train)
        # Appending arbitrary extra rows to val/test cannot matter: refit on
        # the same train rows after mutating the others.
        mutated = table.copy()
        mutated.iloc[42:, 1] = 1e9
        train2, _, _ = chronological_split(mutated, SplitSpec())
        assert fit_scaler(train2) == params

    def test_constant_column_error_names_column(self):
        table = toy_table(30)
        table["census_count_hourly"] = 7
        with pytest.raises(DegenerateColumnError) as err:
            fit_scaler(table)
        assert "census_count_hourly" in str(err.value)

    def test_tolerant_fit_exempts_constant(self):
        table = toy_table(30)
        table["census_count_hourly"] = 7
        params, exempted = fit_scaler_tolerant(table)
        assert exempted == ["census_count_hourly"]
        out = apply_scaler(table, params)
        assert (out["census_count_hourly"] == 7).all()

    def test_scale_values(self):
        table = toy_table(20)
        params = fit_scaler(table)
        mean, std = params.column_stats(TARGET_COLUMN)
        out = apply_scaler(table, params)
        idx = 4
        expected = (table[TARGET_COLUMN].iloc[idx] - mean) / std
        assert out[TARGET_COLUMN].iloc[idx] == pytest.approx(expected, abs=1e-12)

    def test_round_trip_within_1e9(self):
        table = toy_table(50, seed=3)
        params = fit_scaler(table)
        out = apply_scaler(table, params)
        back = invert_scaler(out[TARGET_COLUMN].to_numpy(), params, TARGET_COLUMN)
        assert np.max(np.abs(back - table[TARGET_COLUMN].to_numpy())) < 1e-9

    def test_unknown_column(self):
        params = fit_scaler(toy_table(10))
        with pytest.raises(SchemaMismatchError):
            invert_scaler(np.zeros(3), params, "no_such_column")

    def test_serialization_round_trip(self):
        params = fit_scaler(toy_table(25))
        assert ScalerParams.from_dict(params.to_dict()) == params


class TestMakeWindows:
    def test_boundary_single_window(self):
        ds = make_windows(toy_table(30), WindowSpec(lag=24, horizon=6))
        assert len(ds) == 1
        assert not ds.insufficient

    def test_count_formula(self):
        ds = make_windows(toy_table(48), WindowSpec(lag=24, horizon=6))
        assert len(ds) == 19  # 48 - 24 - 6 + 1

    def test_too_short_flagged_not_error(self):
        ds = make_windows(toy_table(29), WindowSpec(lag=24, horizon=6))
        assert len(ds) == 0
        assert ds.insufficient

    def test_gap_drops_spanning_windows(self):
        offsets = [i for i in range(48) if i != 30]
        table = toy_table(0, keep_hours=offsets)
        ds = make_windows(table, WindowSpec(lag=24, horizon=6))
        oracle = brute_force_window_count(offsets, 24, 6)
        assert len(ds) == oracle < 19
        # No extracted window's span covers the missing hour.
        for origin in ds.origin_ts:
            origin_off = int((origin - utc(2022, 1, 1)) / HOUR)
            assert not (origin_off - 23 <= 30 <= origin_off + 6)

    def test_window_contents_and_causality(self):
        table = toy_table(40, seed=9)
        spec = WindowSpec(lag=5, horizon=3)
        ds = make_windows(table, spec)
        values = table[ds.columns].to_numpy(dtype=np.float64)
        target = table[TARGET_COLUMN].to_numpy()
        for n, origin in enumerate(ds.origin_ts):
            i = int((origin - utc(2022, 1, 1)) / HOUR)  # row index of lag end
            assert np.array_equal(ds.X[n], values[i - 4 : i + 1].T)
            # Target sits exactly horizon hours past the window's last lag hour.
            assert ds.y[n] == target[i + 3]

    def test_origin_strictly_increasing(self):
        ds = make_windows(toy_table(60), WindowSpec(lag=24, horizon=6))
        assert all(b > a for a, b in zip(ds.origin_ts, ds.origin_ts[1:]))

    def test_randomized_formula_property(self):
        # 200 random (T, L, h) cases; gap-free tables obey N = T - L - h + 1.
        rng = np.random.default_rng(77)
        for _ in range(200):
            L = int(rng.integers(1, 30))
            h = int(rng.integers(1, 26))
            T = int(rng.integers(L + h, 500))
            ds = make_windows(toy_table(T), WindowSpec(lag=L, horizon=h))
            assert len(ds) == T - L - h + 1

    def test_randomized_gap_property(self):
        rng = np.random.default_rng(78)
        for _ in range(60):
            T = int(rng.integers(40, 160))
            drop = set(rng.choice(T, size=int(rng.integers(1, 8)), replace=False).tolist())
            offsets = [i for i in range(T) if i not in drop]
            table = toy_table(0, keep_hours=offsets)
            ds = make_windows(table, WindowSpec(lag=6, horizon=4))
            assert len(ds) == brute_force_window_count(offsets, 6, 4)
            present = set(offsets)
            for origin in ds.origin_ts:
                i = int((origin - utc(2022, 1, 1)) / HOUR)
                assert all(s in present for s in range(i - 5, i + 5))


class TestWindowCache:
    def test_round_trip_bit_exact(self, tmp_path):
        table = toy_table(60, seed=11)
        params = fit_scaler(table)
        ds = make_windows(apply_scaler(table, params), WindowSpec(lag=24, horizon=6))
        path = tmp_path / "windows.bin"
        save_windows(ds, path, scaler=params)
        loaded, loaded_params = load_windows(path)
        assert np.array_equal(loaded.X, ds.X)
        assert np.array_equal(loaded.y, ds.y)
        assert loaded.origin_ts == ds.origin_ts
        assert loaded.columns == ds.columns
        assert (loaded.lag, loaded.horizon) == (ds.lag, ds.horizon)
        assert loaded_params == params
