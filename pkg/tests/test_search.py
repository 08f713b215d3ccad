import dataclasses

import numpy as np
import pytest

from meta_forecast.exceptions import ConfigError
from meta_forecast.config import TrainConfig, SearchSpace, BACKBONES, ADAPTATIONS, STRATEGIES
from meta_forecast.frequency import kind_to_frequency
from meta_forecast.synthetic import synthetic_dataset
from meta_forecast.search import (
    config_hash, TrialResult, rank_trials, random_search, trial_table, ablation_label, parse_ablation_label,
    ablation_grid
  )
import meta_forecast.search as search

QUARTERLY = kind_to_frequency['quarterly']

TINY_SPACE = SearchSpace(
    num_steps=(2, 3), minibatch_size=(2,), learning_rate=(1e-3, 1e-2), context_mult=(0.5, 1.0),
    rep_dim=(2, 3), min_history=(4, 8),
  )

BASE = TrainConfig(backbone='linear', checkpoint_every=1, log_every=1000)

def toy_series(count=6):
  return synthetic_dataset(count, freq=QUARTERLY, seed=9)


def test_grid_has_eighteen_distinct_cells():
  grid = ablation_grid(TrainConfig(rep_dim=30))
  labels = [label for label, _ in grid]
  assert len(grid) == len(BACKBONES) * len(ADAPTATIONS) * len(STRATEGIES) == 18
  assert len(set(labels)) == 18
  assert 'Meta+RNN+ITF' in labels
  assert 'FF' in labels
  assert 'ADA+Lin+ITF' in labels
  assert all(config.rep_dim == 30 for _, config in grid)

def test_labels_parse_back():
  for label, config in ablation_grid(TrainConfig()):
    assert parse_ablation_label(label) == (config.backbone, config.adaptation, config.strategy)

def test_label_errors():
  with pytest.raises(ConfigError):
    ablation_label('gru', 'meta', 'iterated')
  for bad in ('Meta', 'RNN+Meta', 'Meta+RNN+FF', ''):
    with pytest.raises(ConfigError):
      parse_ablation_label(bad)

def test_config_hash_is_stable():
  assert config_hash(TrainConfig()) == config_hash(TrainConfig())
  assert config_hash(TrainConfig()) != config_hash(TrainConfig(rep_dim=41))
  assert len(config_hash(TrainConfig())) == 16

def test_rank_order():
  results = [
      TrialResult(0, TrainConfig(), 'failed', message='boom'),
      TrialResult(1, TrainConfig(), 'ok', 12.0),
      TrialResult(2, TrainConfig(), 'rejected'),
      TrialResult(3, TrainConfig(), 'ok', 9.5),
      TrialResult(4, TrainConfig(), 'ok', 12.0),
    ]
  assert [r.trial for r in rank_trials(results)] == [3, 1, 4, 0, 2]

def test_trial_round_trips_through_dict():
  result = TrialResult(7, TrainConfig(rep_dim=22, seed_init=3), 'ok', 11.25)
  again = TrialResult.from_dict(result.to_dict())
  assert again.config == result.config
  assert again.score == 11.25
  assert again.key == result.key
  assert trial_table([result])[0]['key'] == result.key

def test_single_trial():
  results = random_search(toy_series(), TINY_SPACE, 1, 3, np.random.default_rng(0), BASE, QUARTERLY)
  assert len(results) == 1
  assert results[0].status == 'ok'
  assert 0.0 <= results[0].score <= 200.0
  assert results[0].params is not None
  assert results[0].config.seed_init is not None

def test_search_is_reproducible():
  first = random_search(toy_series(), TINY_SPACE, 2, 3, np.random.default_rng(5), BASE, QUARTERLY)
  second = random_search(toy_series(), TINY_SPACE, 2, 3, np.random.default_rng(5), BASE, QUARTERLY)
  assert [(r.key, r.score) for r in first] == [(r.key, r.score) for r in second]

def test_out_of_range_candidate_is_rejected():
  good = dataclasses.replace(BASE, num_steps=2, minibatch_size=2, learning_rate=5e-3, context_mult=1.0, rep_dim=2, min_history=4)
  bad = dataclasses.replace(good, learning_rate=0.5)
  seen = []
  results = random_search(
      toy_series(), TINY_SPACE, 1, 3, np.random.default_rng(0), BASE, QUARTERLY,
      candidates=[bad, good], on_trial=seen.append
    )
  assert [r.status for r in results] == ['ok', 'rejected']
  assert 'learning_rate' in results[1].message
  assert len(seen) == 2
  unchecked = random_search(
      toy_series(), TINY_SPACE, 1, 3, np.random.default_rng(0), BASE, QUARTERLY,
      candidates=[bad], checked=False
    )
  assert unchecked[0].status != 'rejected'

def test_completed_trials_are_not_rerun():
  first = random_search(toy_series(), TINY_SPACE, 2, 3, np.random.default_rng(1), BASE, QUARTERLY)
  completed = dict((r.key, TrialResult.from_dict(r.to_dict())) for r in first)
  seen = []
  again = random_search(
      toy_series(), TINY_SPACE, 2, 3, np.random.default_rng(1), BASE, QUARTERLY,
      completed=completed, on_trial=seen.append
    )
  assert seen == []
  assert sorted((r.key, r.score) for r in again) == sorted((r.key, r.score) for r in first)

def test_search_argument_checks():
  with pytest.raises(ConfigError):
    random_search(toy_series(), TINY_SPACE, 0, 3, np.random.default_rng(0), BASE, QUARTERLY)
  with pytest.raises(ConfigError):
    random_search(toy_series(), TINY_SPACE, 1, 0, np.random.default_rng(0), BASE, QUARTERLY)

def test_search_survives_an_unexpected_trial_error(monkeypatch):
  original = search.train
  calls = []

  def flaky(*args, **kwargs):
    calls.append(1)
    if len(calls) == 1:
      raise ValueError("setting an array element with a sequence")
    return original(*args, **kwargs)

  monkeypatch.setattr(search, 'train', flaky)
  seen = []
  results = random_search(toy_series(), TINY_SPACE, 2, 3, np.random.default_rng(3), BASE, QUARTERLY, on_trial=seen.append)
  assert len(calls) == 2
  assert [r.status for r in seen] == ['failed', 'ok']
  assert 'ValueError' in seen[0].message
  assert [r.status for r in results] == ['ok', 'failed']
