"""Small-scale reproduction of the qualitative results; run with --run-slow"""

import dataclasses

import numpy as np
import pytest

from meta_forecast.config import TrainConfig
from meta_forecast.frequency import kind_to_frequency
from meta_forecast.dataset import split_train_test
from meta_forecast.params import GlobalParams
from meta_forecast.synthetic import toy_meta_dataset
from meta_forecast.training import train, holdout_smape

MONTHLY = kind_to_frequency['monthly']
HORIZON = 18
SEEDS = (0, 1, 2, 3)
EARLY_STEP = 200

def run_cell(source, target, backbone, adaptation, strategy, seed):
  config = TrainConfig(
      num_steps=2000, minibatch_size=32, rep_dim=20, backbone=backbone, adaptation=adaptation,
      strategy=strategy, seed_init=seed, seed_batch=seed + 100, log_every=500,
    )
  early = {}

  def on_step(step, params):
    if step == EARLY_STEP:
      early['smape'] = holdout_smape(target, params, HORIZON)

  result = train(split_train_test(source, HORIZON).train, config, MONTHLY, HORIZON, on_step=on_step)
  return result.params, holdout_smape(target, result.params, HORIZON), early['smape']

@pytest.fixture(scope='module')
def ablation_runs():
  source, target = toy_meta_dataset(seed=0, source_count=500, target_count=200)
  runs = {}
  for seed in SEEDS:
    runs[('meta', seed)] = run_cell(source, target, 'rnn', 'meta', 'iterated', seed)
    runs[('global', seed)] = run_cell(source, target, 'rnn', 'global_head', 'teacher_forced', seed)
  return target, runs


@pytest.mark.slow
def test_meta_rnn_iterated_beats_plain_rnn(ablation_runs):
  _, runs = ablation_runs
  meta = np.median([runs[('meta', s)][1] for s in SEEDS])
  plain = np.median([runs[('global', s)][1] for s in SEEDS])
  assert meta < plain

@pytest.mark.slow
def test_meta_is_ahead_early_in_training(ablation_runs):
  _, runs = ablation_runs
  wins = sum(1 for s in SEEDS if runs[('meta', s)][2] < runs[('global', s)][2])
  assert wins >= 3

@pytest.mark.slow
def test_prediction_only_adaptation_does_not_beat_meta_training(ablation_runs):
  target, runs = ablation_runs
  adapted = []
  for s in SEEDS:
    global_params = runs[('global', s)][0]
    ada = GlobalParams(dataclasses.replace(global_params.spec, adaptation='ada', ada_gamma=1.0), global_params.tensors)
    adapted.append(holdout_smape(target, ada, HORIZON))
  assert np.median(adapted) >= np.median([runs[('meta', s)][1] for s in SEEDS])
