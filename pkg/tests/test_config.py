import dataclasses

import numpy as np
import pytest

from meta_forecast.exceptions import ConfigError
from meta_forecast.config import (
    TrainConfig, RunConfig, SearchSpace, DEFAULT_SEARCH_SPACE, load_config_file, describe
  )


def test_defaults_are_inside_the_search_space():
  TrainConfig().validate(DEFAULT_SEARCH_SPACE)

def test_out_of_range_learning_rate_names_the_field():
  config = TrainConfig(learning_rate=0.5)
  config.validate()
  with pytest.raises(ConfigError, match='learning_rate'):
    config.validate(DEFAULT_SEARCH_SPACE)

@pytest.mark.parametrize('field,value', [
    ('minibatch_size', 0),
    ('rep_dim', 0),
    ('zoneout', 1.5),
    ('strategy', 'direct'),
    ('backbone', 'transformer'),
    ('adaptation', 'finetune'),
    ('clip_norm', 0.0),
  ])
def test_structural_errors(field, value):
  with pytest.raises(ConfigError, match=field):
    dataclasses.replace(TrainConfig(), **{field: value}).validate()

def test_context_len_rounds():
  assert TrainConfig(context_mult=2.0).context_len(18) == 36
  assert TrainConfig(context_mult=0.3).context_len(6) == 2
  assert TrainConfig(context_mult=0.01).context_len(6) == 1

def test_effective_hidden_dim():
  assert TrainConfig(rep_dim=20).effective_hidden_dim == 20
  assert TrainConfig(rep_dim=20, hidden_dim=32).effective_hidden_dim == 32

def test_covariate_switches():
  covariates = TrainConfig(log_scale_covariate=False, normalize_age=True).covariates
  assert not covariates.log_scale
  assert covariates.normalize_age
  assert covariates.warmup_over_padding

def test_from_mapping_rejects_unknown_keys():
  with pytest.raises(ConfigError, match='bogus'):
    TrainConfig.from_mapping(dict(bogus=1))

def test_sampling_stays_in_space():
  rng = np.random.default_rng(0)
  for _ in range(50):
    DEFAULT_SEARCH_SPACE.sample(rng, TrainConfig()).validate(DEFAULT_SEARCH_SPACE)

def test_search_space_from_mapping():
  space = SearchSpace.from_mapping(dict(num_steps=[10, 20], rep_dim=[2, 4]))
  assert space.num_steps == (10, 20)
  assert space.rep_dim == (2, 4)
  with pytest.raises(ConfigError):
    SearchSpace.from_mapping(dict(depth=[1, 2]))

def test_load_config_file(tmp_path):
  path = tmp_path / 'run.yaml'
  path.write_text('learning_rate: 0.0005\nrep_dim: 30\nsource: data.jsonl\n')
  assert load_config_file(str(path)) == dict(learning_rate=0.0005, rep_dim=30, source='data.jsonl')

def test_load_config_file_rejects_nesting(tmp_path):
  path = tmp_path / 'run.yaml'
  path.write_text('train:\n  rep_dim: 30\n')
  with pytest.raises(ConfigError):
    load_config_file(str(path))

def test_load_missing_config_file(tmp_path):
  with pytest.raises(ConfigError):
    load_config_file(str(tmp_path / 'missing.yaml'))

def test_run_config_splits_keys():
  run = RunConfig.from_mapping('train', dict(source='a.jsonl', seed=5, rep_dim=30, unchecked=True))
  assert run.source == 'a.jsonl'
  assert run.seed == 5
  assert run.train.rep_dim == 30
  assert run.unchecked

def test_run_config_validation():
  with pytest.raises(ConfigError, match='learning_rate'):
    RunConfig.from_mapping('train', dict(learning_rate=0.5)).validate()
  RunConfig.from_mapping('train', dict(learning_rate=0.5, unchecked=True)).validate()
  with pytest.raises(ConfigError, match='metric'):
    RunConfig.from_mapping('evaluate', dict(metric='rmse')).validate()

def test_seeds_are_derived_from_master_seed():
  first = RunConfig('train', seed=3).seeds()
  assert first == RunConfig('train', seed=3).seeds()
  assert first != RunConfig('train', seed=4).seeds()
  explicit = RunConfig('train', seed=3, train=TrainConfig(seed_init=11, seed_batch=12))
  assert explicit.seeds() == (11, 12)
  assert explicit.resolved_train().seed_init == 11

def test_describe_lists_changed_fields():
  assert describe(TrainConfig()) == []
  assert describe(TrainConfig(rep_dim=30, backbone='ff')) == ['rep_dim=30', 'backbone=ff']
