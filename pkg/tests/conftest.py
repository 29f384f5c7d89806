"""Shared fixtures: one small seeded corpus and its feature table per session."""

from __future__ import annotations

import pytest

from boardcast.features import build_feature_table, clean_encounters
from boardcast.scenario import ScenarioConfig, generate_corpus
from boardcast.timeutils import utc


@pytest.fixture(scope="session")
def small_config() -> ScenarioConfig:
    # 21 days keeps every suite fast while leaving enough rows to window.
    return ScenarioConfig(seed=123, start_ts=utc(2022, 3, 1), end_ts=utc(2022, 3, 22))


@pytest.fixture(scope="session")
def small_corpus(small_config):
    return generate_corpus(small_config)


@pytest.fixture(scope="session")
def small_table(small_corpus, small_config):
    kept, _ = clean_encounters(small_corpus.encounters)
    return build_feature_table(
        kept,
        small_corpus.inpatient,
        small_corpus.context,
        small_config.start_ts,
        small_config.end_ts,
    )
