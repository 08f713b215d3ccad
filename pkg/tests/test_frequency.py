import pandas as pd
import pytest

from meta_forecast.exceptions import DataError
from meta_forecast.frequency import (
    kind_to_frequency, parse_frequency, recommended_targets, SOURCE_TARGETS
  )


@pytest.mark.parametrize('token,kind', [
    ('M', 'monthly'),
    ('MS', 'monthly'),
    ('monthly', 'monthly'),
    ('12M', 'yearly'),
    ('A', 'yearly'),
    ('Q-DEC', 'quarterly'),
    ('W-SUN', 'weekly'),
    ('1H', 'hourly'),
    ('h', 'hourly'),
    ('D', 'daily'),
  ])
def test_parse_frequency(token, kind):
  assert parse_frequency(token) is kind_to_frequency[kind]

def test_unknown_frequency():
  with pytest.raises(DataError):
    parse_frequency('fortnightly')

def test_lags_are_positive_and_increasing():
  for freq in kind_to_frequency.values():
    assert freq.default_lags[0] >= 1
    assert all(a < b for a, b in zip(freq.default_lags, freq.default_lags[1:]))
    assert freq.max_lag == freq.default_lags[-1]

def test_source_horizons():
  assert kind_to_frequency['yearly'].source_horizon == 6
  assert kind_to_frequency['quarterly'].source_horizon == 8
  assert kind_to_frequency['monthly'].source_horizon == 18
  assert kind_to_frequency['hourly'].source_horizon == 48

def test_source_target_table_horizons_match_frequencies():
  for source, (horizon, _) in SOURCE_TARGETS.items():
    kind = source.split('-', 1)[1]
    assert kind_to_frequency[kind].source_horizon == horizon

def test_recommended_targets():
  assert ('tour-year', 4) in recommended_targets(kind_to_frequency['yearly'])
  assert ('M3-quart', 8) in recommended_targets(kind_to_frequency['quarterly'])
  assert recommended_targets(kind_to_frequency['weekly']) == []

def test_timestamps():
  monthly = kind_to_frequency['monthly']
  assert monthly.timestamp(pd.Timestamp('2020-01-01'), 13) == pd.Timestamp('2021-02-01')
  hourly = kind_to_frequency['hourly']
  assert hourly.timestamp(pd.Timestamp('2015-01-01 00:00:00'), 25) == pd.Timestamp('2015-01-02 01:00:00')
