#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""
Hyperparameter random search and the ablation grid.

Search trials are identified by a hash of their resolved configuration, so an
interrupted search can be resumed by passing the results already obtained.

Ablation labels are built from three parts joined by '+': an optional output
layer prefix ('Meta' for the per-series ridge layer, 'ADA' for ridge applied
only at prediction time, nothing for a plain global head), the backbone ('RNN',
'FF' or 'Lin'), and an optional 'ITF' suffix when training uses iterated
forecasts rather than teacher forcing. For example 'Meta+RNN+ITF' or 'FF'.
"""

from typing import Optional, List, Dict, Tuple, Sequence, Mapping, Callable

import hashlib
import logging
import dataclasses
from dataclasses import dataclass

import numpy as np
import yaml

from .typehints import JsonableDict
from .exceptions import MetaForecastError, ConfigError
from .config import TrainConfig, SearchSpace, BACKBONES, ADAPTATIONS, STRATEGIES
from .frequency import Frequency
from .dataset import TimeSeries, split_train_test
from .params import GlobalParams
from .training import train, holdout_smape

logger = logging.getLogger(__name__)

def config_hash(config: TrainConfig) -> str:
  """A short stable digest of a configuration"""
  content = yaml.dump(config.to_dict(), sort_keys=True, default_flow_style=True, width=10000)
  return hashlib.sha256(content.encode('utf-8')).hexdigest()[:16]

@dataclass
class TrialResult:
  """Outcome of one search trial"""

  trial: int
  config: TrainConfig
  status: str
  """'ok', 'rejected' (outside the search space) or 'failed' (training or scoring raised)"""
  score: Optional[float] = None
  """200-scaled sMAPE on the selection subset; None unless status is 'ok'"""
  message: str = ''
  params: Optional[GlobalParams] = None

  @property
  def key(self) -> str:
    return config_hash(self.config)

  def to_dict(self) -> JsonableDict:
    return dict(
        trial=self.trial,
        key=self.key,
        config=self.config.to_dict(),
        score=self.score,
        status=self.status,
        message=self.message,
      )

  @classmethod
  def from_dict(cls, data: Mapping) -> 'TrialResult':
    score = data.get('score', None)
    return cls(
        trial=int(data['trial']),
        config=TrainConfig.from_mapping(data['config']),
        status=str(data['status']),
        score=None if score is None else float(score),
        message=str(data.get('message', '')),
      )

def rank_trials(results: Sequence[TrialResult]) -> List[TrialResult]:
  """Successful trials by ascending score (ties by trial number), then the others by trial number"""
  ok = sorted((r for r in results if r.status == 'ok'), key=lambda r: (r.score, r.trial))
  rest = sorted((r for r in results if r.status != 'ok'), key=lambda r: r.trial)
  return ok + rest

def random_search(
      dataset: Sequence[TimeSeries],
      space: SearchSpace,
      n_trials: int,
      selection_subset_size: int,
      rng: np.random.Generator,
      base: TrainConfig,
      freq: Frequency,
      horizon: Optional[int]=None,
      candidates: Optional[Sequence[TrainConfig]]=None,
      completed: Optional[Mapping[str, TrialResult]]=None,
      on_trial: Optional[Callable[[TrialResult], None]]=None,
      checked: bool=True
    ) -> List[TrialResult]:
  """Train randomly sampled configurations and rank them by held-out sMAPE.

  The dataset is split by removing the last horizon observations of each
  series. Every trial trains on the shortened series and is scored on the
  removed tails of one selection subset, drawn once before the first trial.

  Args:
      dataset (Sequence[TimeSeries]): Source dataset.
      space (SearchSpace): Sampling ranges, also used for validation when checked.
      n_trials (int): Number of trials (>= 1).
      selection_subset_size (int): Number of series scored per trial (capped at the dataset size).
      rng (np.random.Generator): Drives subset selection, sampling and per-trial seeds.
      base (TrainConfig): Fields the space does not cover. If its seeds are None,
                        each trial gets seeds drawn from rng.
      freq (Frequency): Dataset frequency.
      horizon (Optional[int], optional): Forecast horizon; base.horizon or the
                        frequency's source horizon if None.
      candidates (Optional[Sequence[TrainConfig]], optional): Explicit configurations
                        to try instead of sampling; n_trials is then ignored.
      completed (Optional[Mapping[str, TrialResult]], optional): Results of an
                        earlier run keyed by config hash; matching trials are not rerun.
      on_trial (Optional[Callable[[TrialResult], None]], optional): Called after each new trial.
      checked (bool, optional): Reject configurations outside space. Defaults to True.

  Raises:
      ConfigError: n_trials < 1 or selection_subset_size < 1.

  Returns:
      List[TrialResult]: All trials, ranked (see rank_trials).
  """
  if candidates is None and n_trials < 1:
    raise ConfigError(f"random_search needs n_trials >= 1, got {n_trials}")
  if selection_subset_size < 1:
    raise ConfigError(f"random_search needs selection_subset_size >= 1, got {selection_subset_size}")
  h = horizon if not horizon is None else (base.horizon if not base.horizon is None else freq.source_horizon)
  split = split_train_test(dataset, h)
  size = min(selection_subset_size, len(split.test))
  chosen = np.sort(rng.choice(len(split.test), size=size, replace=False)) if size > 0 else np.array([], dtype=np.int64)
  selection = [split.test[int(i)] for i in chosen]
  logger.info(f"Random search: {n_trials if candidates is None else len(candidates)} trials, selection subset of {len(selection)} series")

  configs: List[TrainConfig] = []
  count = n_trials if candidates is None else len(candidates)
  for i in range(count):
    config = space.sample(rng, base) if candidates is None else candidates[i]
    seed_init, seed_batch = int(rng.integers(0, 2**31)), int(rng.integers(0, 2**31))
    if config.seed_init is None:
      config = dataclasses.replace(config, seed_init=seed_init)
    if config.seed_batch is None:
      config = dataclasses.replace(config, seed_batch=seed_batch)
    configs.append(config)

  results: List[TrialResult] = []
  for trial, config in enumerate(configs):
    key = config_hash(config)
    if not completed is None and key in completed:
      previous = completed[key]
      logger.info(f"Trial {trial}: already done ({previous.status}), skipped")
      results.append(dataclasses.replace(previous, trial=trial))
      continue
    try:
      config.validate(space if checked else None)
    except ConfigError as e:
      logger.warning(f"Trial {trial} rejected: {e}")
      result = TrialResult(trial, config, 'rejected', message=str(e))
    else:
      try:
        trained = train(split.train, config, freq, horizon=h)
        value = holdout_smape(selection, trained.params, h)
        result = TrialResult(trial, config, 'ok', value, params=trained.params)
        logger.info(f"Trial {trial}: sMAPE {value:.4f}")
      except MetaForecastError as e:
        logger.warning(f"Trial {trial} failed: {e}")
        result = TrialResult(trial, config, 'failed', message=str(e))
      except Exception as e:
        logger.exception(f"Trial {trial} failed unexpectedly")
        result = TrialResult(trial, config, 'failed', message=f"{type(e).__name__}: {e}")
    results.append(result)
    if not on_trial is None:
      on_trial(result)
  return rank_trials(results)

def trial_table(results: Sequence[TrialResult]) -> List[JsonableDict]:
  """The structured search table: one {trial, config, score, status} row per trial, in ranked order"""
  return [r.to_dict() for r in results]

BACKBONE_LABELS: Dict[str, str] = {'rnn': 'RNN', 'ff': 'FF', 'linear': 'Lin'}
ADAPTATION_PREFIXES: Dict[str, Optional[str]] = {'meta': 'Meta', 'ada': 'ADA', 'global_head': None}
ITERATED_SUFFIX: str = 'ITF'

def ablation_label(backbone: str, adaptation: str, strategy: str) -> str:
  """Canonical label of an ablation cell, e.g. 'Meta+RNN+ITF'"""
  if not backbone in BACKBONE_LABELS or not adaptation in ADAPTATION_PREFIXES or not strategy in STRATEGIES:
    raise ConfigError(f"No ablation label for ({backbone}, {adaptation}, {strategy})")
  parts: List[str] = []
  prefix = ADAPTATION_PREFIXES[adaptation]
  if not prefix is None:
    parts.append(prefix)
  parts.append(BACKBONE_LABELS[backbone])
  if strategy == 'iterated':
    parts.append(ITERATED_SUFFIX)
  return '+'.join(parts)

def parse_ablation_label(label: str) -> Tuple[str, str, str]:
  """(backbone, adaptation, strategy) of a canonical label

  Raises:
      ConfigError: The label is not canonical.
  """
  parts = label.split('+')
  adaptation = 'global_head'
  strategy = 'teacher_forced'
  for kind, prefix in ADAPTATION_PREFIXES.items():
    if not prefix is None and len(parts) > 0 and parts[0] == prefix:
      adaptation = kind
      parts = parts[1:]
      break
  if len(parts) > 0 and parts[-1] == ITERATED_SUFFIX:
    strategy = 'iterated'
    parts = parts[:-1]
  backbones = dict((v, k) for k, v in BACKBONE_LABELS.items())
  if len(parts) != 1 or not parts[0] in backbones:
    raise ConfigError(f"Not an ablation label: {label!r}")
  return backbones[parts[0]], adaptation, strategy

def ablation_grid(base: TrainConfig) -> List[Tuple[str, TrainConfig]]:
  """Every (backbone, output layer, training strategy) combination applied to base, with its label"""
  result: List[Tuple[str, TrainConfig]] = []
  for backbone in BACKBONES:
    for adaptation in ADAPTATIONS:
      for strategy in STRATEGIES:
        config = dataclasses.replace(base, backbone=backbone, adaptation=adaptation, strategy=strategy)
        result.append((ablation_label(backbone, adaptation, strategy), config))
  return result
