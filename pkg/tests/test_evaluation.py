import json
import math

import numpy as np
import pandas as pd
import pytest
import yaml

from meta_forecast.exceptions import ConfigError, DataError
from meta_forecast.frequency import kind_to_frequency
from meta_forecast.dataset import TimeSeries
from meta_forecast.evaluation import (
    smape_metric, nd_metric, mape_metric, metric_function, aggregate, ForecastSet, holdout_targets, score,
    ensemble_median, confidence_interval, report, write_forecasts, read_forecasts
  )

Z = np.array([100.0, 200.0])
Z_HAT = np.array([110.0, 180.0])

def forecast_set(model_id, rows, dataset_id='d'):
  result = ForecastSet(model_id, dataset_id)
  for item_id, values in rows.items():
    result.add(item_id, np.asarray(values, dtype=np.float64))
  return result


def test_metric_values_on_the_reference_pair():
  assert abs(smape_metric(Z_HAT, Z) - 200.0 * (10.0 / 210.0 + 20.0 / 380.0) / 2.0) < 1e-6
  assert smape_metric(Z_HAT, Z) == pytest.approx(10.0251, abs=1e-4)
  assert abs(nd_metric(Z_HAT, Z) - 0.1) < 1e-6
  assert abs(mape_metric(Z_HAT, Z) - 10.0) < 1e-6

def test_metric_limits():
  assert smape_metric(Z, Z) == 0.0
  assert smape_metric(np.zeros(3), np.zeros(3)) == 0.0
  assert nd_metric(2.0 * Z, Z) == pytest.approx(1.0)
  assert mape_metric(np.zeros(2), Z) == pytest.approx(100.0)
  assert smape_metric(-Z, Z) == pytest.approx(200.0)

def test_smape_averages_series_not_steps():
  f = np.array([[1.0, 1.0], [2.0, 2.0]])
  z = np.array([[1.0, 1.0], [1.0, 1.0]])
  assert smape_metric(f, z) == pytest.approx((0.0 + 200.0 / 3.0) / 2.0)

def test_nd_is_undefined_for_zero_targets():
  with pytest.raises(DataError):
    nd_metric(np.ones(3), np.zeros(3))

def test_mape_lists_zero_targets():
  f = np.ones((2, 3))
  z = np.array([[1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
  with pytest.raises(DataError) as info:
    mape_metric(f, z, ['alpha', 'beta'])
  assert '(alpha, 2)' in str(info.value)
  assert '(beta, 3)' in str(info.value)

def test_misaligned_shapes():
  with pytest.raises(DataError):
    smape_metric(np.ones(3), np.ones(2))
  with pytest.raises(DataError):
    smape_metric(np.ones((1, 0)), np.ones((1, 0)))

def test_metric_function():
  assert metric_function('nd') is nd_metric
  with pytest.raises(ConfigError):
    metric_function('rmse')

def test_aggregate_reproduces_published_weighting():
  value = aggregate([15.305, 8.970, 13.335, 4.848], [6, 8, 18, 8], [645, 756, 1428, 174])
  assert abs(value - 12.509) < 0.01

def test_aggregate_of_one():
  assert aggregate([3.5], [4], [10]) == 3.5

def test_aggregate_errors():
  with pytest.raises(DataError):
    aggregate([], [], [])
  with pytest.raises(DataError):
    aggregate([1.0, 2.0], [1], [1, 2])
  with pytest.raises(DataError):
    aggregate([1.0], [0], [5])

def test_median_ensemble():
  sets = [forecast_set(f"m{v}", dict(a=[float(v)])) for v in (1, 5, 100)]
  assert ensemble_median(sets).forecasts['a'][0] == 5.0
  pair = [forecast_set('x', dict(a=[2.0])), forecast_set('y', dict(a=[4.0]))]
  assert ensemble_median(pair).forecasts['a'][0] == 3.0
  assert ensemble_median(sets, k=2).forecasts['a'][0] == 3.0

def test_single_member_ensemble_is_the_member():
  member = forecast_set('m', dict(a=[1.0, 2.0], b=[3.0, 4.0]))
  result = ensemble_median([member], k=1)
  for item_id in member.item_ids:
    assert np.array_equal(result.forecasts[item_id], member.forecasts[item_id])

def test_ensemble_ignores_member_order():
  rng = np.random.default_rng(0)
  sets = [forecast_set(f"m{i}", dict(a=rng.normal(size=4), b=rng.normal(size=4))) for i in range(5)]
  forward = ensemble_median(sets)
  backward = ensemble_median(list(reversed(sets)))
  for item_id in ('a', 'b'):
    assert np.array_equal(forward.forecasts[item_id], backward.forecasts[item_id])

def test_ensemble_errors():
  with pytest.raises(DataError):
    ensemble_median([])
  one = forecast_set('m', dict(a=[1.0]))
  with pytest.raises(DataError):
    ensemble_median([one], k=2)
  with pytest.raises(DataError):
    ensemble_median([one, forecast_set('n', dict(b=[1.0]))])

def test_confidence_interval():
  mean, ci = confidence_interval([1.0, 2.0, 3.0, 4.0])
  assert mean == 2.5
  assert ci == pytest.approx(1.96 * math.sqrt(5.0 / 3.0) / 2.0)
  assert confidence_interval([7.0, 7.0, 7.0]) == (7.0, 0.0)
  assert confidence_interval([7.0]) == (7.0, 0.0)
  with pytest.raises(DataError):
    confidence_interval([])

def test_holdout_targets():
  s = TimeSeries('s', pd.Timestamp('2001-01-01'), kind_to_frequency['yearly'], np.arange(1.0, 9.0))
  assert np.array_equal(holdout_targets([s], 3)['s'], [6.0, 7.0, 8.0])
  with pytest.raises(DataError):
    holdout_targets([s], 9)

def test_score_requires_alignment():
  targets = dict(a=Z, b=Z)
  assert score(forecast_set('m', dict(b=Z, a=Z)), targets, 'smape') == 0.0
  with pytest.raises(DataError):
    score(forecast_set('m', dict(a=Z)), targets, 'smape')
  with pytest.raises(DataError):
    score(forecast_set('m', dict(a=Z, b=Z, c=Z)), targets, 'smape')

def test_duplicate_forecast_is_rejected():
  with pytest.raises(DataError):
    forecast_set('m', dict(a=Z)).add('a', Z)

def test_report(tmp_path):
  targets = dict(a=Z)
  models = [forecast_set('good', dict(a=Z)), forecast_set('bad', dict(a=Z_HAT))]
  result = report(models, targets, 'nd')
  assert result.per_model == dict(good=0.0, bad=pytest.approx(0.1))
  assert result.mean == pytest.approx(0.05)
  assert result.ensemble == pytest.approx(0.05)
  assert result.dataset == 'd'
  path = str(tmp_path / 'report.yaml')
  result.save(path)
  with open(path) as f:
    saved = yaml.safe_load(f)
  assert saved['models'] == ['good', 'bad']
  assert saved['value'] == pytest.approx(0.05)
  assert report(models, targets, 'nd', ensemble=False).ensemble is None
  with pytest.raises(ConfigError):
    report(models, targets, 'rmse')

def test_forecast_export(tmp_path):
  path = str(tmp_path / 'forecasts.jsonl')
  original = forecast_set('m', dict(b=[1.5, 2.5], a=[3.0, 4.0]))
  stamps = dict(b=(pd.Timestamp('2020-01-01'), pd.DateOffset(months=1)))
  write_forecasts(path, original, stamps)
  with open(path) as f:
    rows = [json.loads(line) for line in f]
  assert [(r['item_id'], r['t']) for r in rows] == [('b', 1), ('b', 2), ('a', 1), ('a', 2)]
  assert rows[1]['timestamp'] == '2020-02-01 00:00:00'
  assert not 'timestamp' in rows[2]
  loaded = read_forecasts(path)
  assert loaded.model_id == 'forecasts.jsonl'
  assert loaded.item_ids == ['b', 'a']
  assert np.array_equal(loaded.forecasts['b'], [1.5, 2.5])

def test_read_forecasts_with_gaps(tmp_path):
  path = tmp_path / 'gap.jsonl'
  path.write_text('{"item_id": "a", "t": 1, "forecast": 1.0}\n{"item_id": "a", "t": 3, "forecast": 1.0}\n')
  with pytest.raises(DataError):
    read_forecasts(str(path))

def test_read_malformed_forecasts(tmp_path):
  path = tmp_path / 'bad.jsonl'
  path.write_text('{"item_id": "a", "t": 1}\n')
  with pytest.raises(DataError, match='line 1'):
    read_forecasts(str(path))
  with pytest.raises(DataError):
    read_forecasts(str(tmp_path / 'missing.jsonl'))
