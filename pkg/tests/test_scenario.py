"""Synthetic corpus generator: rate model, determinism, record invariants."""

from __future__ import annotations

import math
from dataclasses import replace

import pytest

from boardcast.errors import RangeError, ValidationError
from boardcast.scenario import (
    ScenarioConfig,
    arrival_rate,
    federal_holidays,
    football_game_days,
    generate_corpus,
    read_corpus,
    write_corpus,
)
from boardcast.timeutils import HOUR, utc


def flat_config(**overrides) -> ScenarioConfig:
    """A config with every modulation switched off unless overridden."""
    base = dict(
        seed=1,
        start_ts=utc(2022, 3, 1),
        end_ts=utc(2022, 3, 3),
        base_arrival_rate=5.0,
        daily_amplitude=0.0,
        weekly_amplitude=0.0,
        congestion_coupling=0.0,
        event_rate_multipliers={"holiday": 1.0, "football_a": 1.0, "football_b": 1.0},
    )
    base.update(overrides)
    return ScenarioConfig(**base)


class TestArrivalRate:
    def test_all_modulation_off(self):
        cfg = flat_config()
        assert arrival_rate(utc(2022, 3, 1, 12), cfg) == 5.0

    def test_daily_peak_at_hour_six(self):
        # sin(2*pi*6/24) = 1, so the daily term peaks exactly at hour 6.
        cfg = flat_config(base_arrival_rate=10.0, daily_amplitude=0.5)
        assert arrival_rate(utc(2022, 3, 1, 6), cfg) == pytest.approx(15.0, abs=1e-12)

    def test_holiday_multiplier(self):
        # 2022-07-04 is Independence Day; hand product 4 * 1.5 = 6, cross-checked
        # against direct evaluation of the formula with unit sine terms.
        cfg = flat_config(
            start_ts=utc(2022, 7, 1),
            end_ts=utc(2022, 7, 8),
            base_arrival_rate=4.0,
            event_rate_multipliers={"holiday": 1.5, "football_a": 1.0, "football_b": 1.0},
        )
        assert arrival_rate(utc(2022, 7, 4, 0), cfg) == pytest.approx(6.0, abs=1e-12)
        assert arrival_rate(utc(2022, 7, 5, 0), cfg) == pytest.approx(4.0, abs=1e-12)

    def test_out_of_range_rejected(self):
        cfg = flat_config()
        with pytest.raises(RangeError):
            arrival_rate(utc(2022, 3, 3), cfg)  # end is exclusive

    def test_24h_periodicity_without_weekly_or_events(self):
        cfg = flat_config(
            daily_amplitude=0.4,
            start_ts=utc(2022, 3, 1),
            end_ts=utc(2022, 3, 10),
        )
        for hour in range(24):
            a = arrival_rate(utc(2022, 3, 1, hour), cfg)
            b = arrival_rate(utc(2022, 3, 2, hour), cfg)
            assert a == pytest.approx(b, abs=1e-12)


class TestCalendars:
    def test_eleven_federal_holidays_each_year(self):
        for year in (2019, 2021, 2023):
            days = federal_holidays(year)
            assert len(days) == 11
            assert len(set(days)) == 11

    def test_known_holiday_dates(self):
        days = set(federal_holidays(2022))
        assert utc(2022, 7, 4).date() in days
        assert utc(2022, 11, 24).date() in days  # Thanksgiving: 4th Thursday
        assert utc(2022, 1, 17).date() in days   # MLK: 3rd Monday of January

    def test_football_saturdays_alternate(self):
        team_a, team_b = football_game_days(2022)
        assert team_a and team_b
        assert not team_a & team_b
        for d in team_a | team_b:
            assert d.weekday() == 5
            assert 9 <= d.month <= 11


class TestGenerateCorpus:
    def test_empty_range(self):
        cfg = flat_config(end_ts=utc(2022, 3, 1))
        corpus = generate_corpus(cfg)
        assert corpus.encounters == [] and corpus.context == [] and corpus.inpatient == []

    def test_invalid_config_lists_fields(self):
        cfg = flat_config(base_arrival_rate=-1.0, admit_probability=1.5)
        with pytest.raises(ValidationError) as err:
            generate_corpus(cfg)
        message = str(err.value)
        assert "base_arrival_rate" in message and "admit_probability" in message

    def test_deterministic_bytes(self, tmp_path):
        cfg = flat_config(daily_amplitude=0.3, weekly_amplitude=0.1)
        for sub in ("a", "b"):
            write_corpus(generate_corpus(cfg), tmp_path / sub)
        for name in ("encounters.csv", "context.csv", "inpatient.csv", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_poisson_total_within_bound(self):
        # 48 h at a flat 5/h: mean 240; a 4-sigma band essentially never misses.
        bound = 4 * math.sqrt(240)
        for seed in range(10):
            cfg = flat_config(seed=seed)
            total = len(generate_corpus(cfg).encounters)
            assert 240 - bound <= total <= 240 + bound

    def test_no_admissions_when_probability_zero(self):
        cfg = flat_config(admit_probability=0.0)
        corpus = generate_corpus(cfg)
        assert corpus.encounters
        assert all(e.bed_request_ts is None for e in corpus.encounters)

    def test_record_invariants_hold(self, small_corpus):
        assert small_corpus.encounters
        for e in small_corpus.encounters:
            e.check_invariants()

    def test_admitted_fraction_converges(self):
        cfg = flat_config(end_ts=utc(2022, 6, 1), admit_probability=0.3)  # ~11k encounters
        corpus = generate_corpus(cfg)
        n = len(corpus.encounters)
        assert n >= 10_000
        admitted = sum(1 for e in corpus.encounters if e.bed_request_ts is not None)
        se = math.sqrt(0.3 * 0.7 / n)
        assert abs(admitted / n - 0.3) <= 3 * se

    def test_one_context_record_per_hour(self, small_corpus, small_config):
        hours = [c.hour_ts for c in small_corpus.context]
        assert len(hours) == len(set(hours))
        assert hours[0] == small_config.start_ts
        assert hours[-1] == small_config.end_ts - HOUR
        assert all(b - a == HOUR for a, b in zip(hours, hours[1:]))

    def test_census_never_negative(self, small_corpus):
        census = 0
        for ev in small_corpus.inpatient:
            if ev.event_kind == "admission":
                census += 1
            elif ev.event_kind == "discharge":
                census -= 1
            assert census >= 0

    def test_boarding_mean_in_plausible_band(self, small_table):
        # The defaults should land the hourly boarding series in a broad,
        # hospital-plausible band (several hours on average).
        mean = small_table["boarding_time_minute_hourly"].mean()
        sd = small_table["boarding_time_minute_hourly"].std()
        assert 200 < mean < 1200
        assert sd > 50

    def test_manifest_pins_generator_and_seed(self, tmp_path, small_corpus):
        manifest = write_corpus(small_corpus, tmp_path)
        assert manifest["generator"]["rng"] == "numpy-pcg64"
        assert manifest["seed"] == small_corpus.config.seed
        assert manifest["rows"]["encounters"] == len(small_corpus.encounters)

    def test_round_trip(self, tmp_path, small_corpus):
        write_corpus(small_corpus, tmp_path)
        loaded = read_corpus(tmp_path)
        assert loaded.config == replace(small_corpus.config)
        assert loaded.encounters == small_corpus.encounters
        assert loaded.context == small_corpus.context
        assert loaded.inpatient == small_corpus.inpatient
