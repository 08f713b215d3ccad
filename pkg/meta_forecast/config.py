#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""
Configuration objects: covariate switches, training hyperparameters, the
random-search space they are validated against, and the run configuration
assembled by the command line. Config files are flat YAML mappings whose keys
are the TrainConfig/RunConfig field names.
"""

from typing import Optional, Tuple, Dict, Any, Mapping, List

import math
import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from .typehints import JsonableDict
from .exceptions import ConfigError

STRATEGIES: Tuple[str, ...] = ('iterated', 'teacher_forced')
"""Ways of filling lag covariates inside the horizon during training"""

BACKBONES: Tuple[str, ...] = ('rnn', 'ff', 'linear')
"""Representation networks"""

ADAPTATIONS: Tuple[str, ...] = ('meta', 'global_head', 'ada')
"""Output layers: closed-form per-series ridge, a global linear head, or a global head replaced by ridge at prediction"""

@dataclass(frozen=True)
class CovariateConfig:
  """Switches controlling which covariates accompany the lags"""

  log_scale: bool = True
  """Include log(scale) as a covariate. Forecasts are positively homogeneous only when this is off."""

  normalize_age: bool = False
  """Divide the age covariate by the context length"""

  warmup_over_padding: bool = True
  """Run the recurrence through padded context positions; if False the state is held at zero there"""

@dataclass(frozen=True)
class SearchSpace:
  """Ranges that randomly sampled (and, unless unchecked, user supplied) configurations must respect"""

  num_steps: Tuple[int, ...] = (25000, 50000)
  minibatch_size: Tuple[int, ...] = (32, 64, 128)
  learning_rate: Tuple[float, float] = (1e-5, 2e-3)
  context_mult: Tuple[float, float] = (0.3, 5.0)
  rep_dim: Tuple[int, int] = (20, 50)
  min_history: Tuple[int, int] = (24, 100)

  def sample(self, rng: np.random.Generator, base: 'TrainConfig') -> 'TrainConfig':
    """Draw one configuration: categorical and integer entries uniformly, the learning rate log-uniformly

    Args:
        rng (np.random.Generator): Source of randomness.
        base (TrainConfig): Supplies every field the space does not cover.

    Returns:
        TrainConfig: The sampled configuration.
    """
    lo, hi = self.learning_rate
    return dataclasses.replace(
        base,
        num_steps=int(rng.choice(self.num_steps)),
        minibatch_size=int(rng.choice(self.minibatch_size)),
        learning_rate=float(math.exp(rng.uniform(math.log(lo), math.log(hi)))),
        context_mult=float(rng.uniform(*self.context_mult)),
        rep_dim=int(rng.integers(self.rep_dim[0], self.rep_dim[1] + 1)),
        min_history=int(rng.integers(self.min_history[0], self.min_history[1] + 1)),
      )

  def to_dict(self) -> JsonableDict:
    return dict((f.name, list(getattr(self, f.name))) for f in dataclasses.fields(self))

  @classmethod
  def from_mapping(cls, data: Mapping[str, Any]) -> 'SearchSpace':
    known = set(f.name for f in dataclasses.fields(cls))
    unknown = set(data.keys()) - known
    if len(unknown) > 0:
      raise ConfigError(f"Unknown search space keys: {sorted(unknown)}")
    return cls(**dict((k, tuple(v)) for k, v in data.items()))

DEFAULT_SEARCH_SPACE = SearchSpace()
"""The competition-scale search space"""

@dataclass(frozen=True)
class TrainConfig:
  """Hyperparameters of one training run"""

  num_steps: int = 25000
  minibatch_size: int = 128
  learning_rate: float = 1e-3
  context_mult: float = 2.0
  """Context length = round(context_mult * source horizon)"""
  rep_dim: int = 40
  """Dimension d of the representation (and of the local ridge weights)"""
  hidden_dim: Optional[int] = None
  """LSTM hidden size; None means equal to rep_dim"""
  min_history: int = 24
  """Minimum number of real observations in the context of a training slice"""
  horizon: Optional[int] = None
  """Training horizon; None means the frequency's source horizon"""
  seed_init: Optional[int] = None
  seed_batch: Optional[int] = None
  strategy: str = 'iterated'
  backbone: str = 'rnn'
  adaptation: str = 'meta'
  zoneout: float = 0.1
  weight_decay: float = 1e-8
  clip_norm: float = 10.0
  checkpoint_every: int = 50
  checkpoint_average: int = 5
  ada_gamma: float = 1.0
  """Ridge regularizer used at prediction time by the 'ada' adaptation"""
  log_scale_covariate: bool = True
  normalize_age: bool = False
  warmup_over_padding: bool = True
  eval_every: int = 0
  """If > 0, score the held-out tail of a monitoring subset every eval_every steps"""
  eval_series: int = 0
  """Size of the monitoring subset (0 disables monitoring)"""
  log_every: int = 100

  @property
  def covariates(self) -> CovariateConfig:
    return CovariateConfig(
        log_scale=self.log_scale_covariate,
        normalize_age=self.normalize_age,
        warmup_over_padding=self.warmup_over_padding,
      )

  @property
  def effective_hidden_dim(self) -> int:
    return self.rep_dim if self.hidden_dim is None else self.hidden_dim

  def context_len(self, horizon: int) -> int:
    """round(context_mult * horizon) to the nearest integer, at least 1"""
    return max(1, int(math.floor(self.context_mult * horizon + 0.5)))

  def validate(self, space: Optional[SearchSpace]=None) -> 'TrainConfig':
    """Check structural sanity and, if space is given, range membership.

    Args:
        space (Optional[SearchSpace], optional): Ranges to enforce, or None to
                        only check that values are structurally usable. Defaults to None.

    Raises:
        ConfigError: A field is invalid; the message names it.

    Returns:
        TrainConfig: self, for chaining.
    """
    def require(ok: bool, name: str, detail: str) -> None:
      if not ok:
        raise ConfigError(f"Invalid config field '{name}'={getattr(self, name)!r}: {detail}")

    require(self.num_steps >= 0, 'num_steps', "must be >= 0")
    require(self.minibatch_size >= 1, 'minibatch_size', "must be >= 1")
    require(self.learning_rate > 0.0, 'learning_rate', "must be > 0")
    require(self.context_mult > 0.0, 'context_mult', "must be > 0")
    require(self.rep_dim >= 1, 'rep_dim', "must be >= 1")
    require(self.hidden_dim is None or self.hidden_dim >= 1, 'hidden_dim', "must be >= 1")
    require(self.min_history >= 1, 'min_history', "must be >= 1")
    require(self.horizon is None or self.horizon >= 1, 'horizon', "must be >= 1")
    require(self.strategy in STRATEGIES, 'strategy', f"must be one of {STRATEGIES}")
    require(self.backbone in BACKBONES, 'backbone', f"must be one of {BACKBONES}")
    require(self.adaptation in ADAPTATIONS, 'adaptation', f"must be one of {ADAPTATIONS}")
    require(0.0 <= self.zoneout <= 1.0, 'zoneout', "must be in [0, 1]")
    require(self.weight_decay >= 0.0, 'weight_decay', "must be >= 0")
    require(self.clip_norm > 0.0, 'clip_norm', "must be > 0")
    require(self.checkpoint_every >= 1, 'checkpoint_every', "must be >= 1")
    require(self.checkpoint_average >= 1, 'checkpoint_average', "must be >= 1")
    require(self.ada_gamma > 0.0, 'ada_gamma', "must be > 0")
    require(self.eval_every >= 0, 'eval_every', "must be >= 0")
    require(self.eval_series >= 0, 'eval_series', "must be >= 0")
    require(self.log_every >= 1, 'log_every', "must be >= 1")
    if not space is None:
      require(self.num_steps in space.num_steps, 'num_steps', f"must be one of {space.num_steps}")
      require(self.minibatch_size in space.minibatch_size, 'minibatch_size', f"must be one of {space.minibatch_size}")
      lo, hi = space.learning_rate
      require(lo <= self.learning_rate <= hi, 'learning_rate', f"must be in [{lo}, {hi}]")
      lo, hi = space.context_mult
      require(lo <= self.context_mult <= hi, 'context_mult', f"must be in [{lo}, {hi}]")
      ilo, ihi = space.rep_dim
      require(ilo <= self.rep_dim <= ihi, 'rep_dim', f"must be in [{ilo}, {ihi}]")
      require(
          self.hidden_dim is None or ilo <= self.hidden_dim <= ihi,
          'hidden_dim', f"must be in [{ilo}, {ihi}]"
        )
      ilo, ihi = space.min_history
      require(ilo <= self.min_history <= ihi, 'min_history', f"must be in [{ilo}, {ihi}]")
    return self

  def to_dict(self) -> JsonableDict:
    return dict(dataclasses.asdict(self))

  @classmethod
  def from_mapping(cls, data: Mapping[str, Any]) -> 'TrainConfig':
    """Build from a flat mapping; unknown keys are rejected"""
    known = set(f.name for f in dataclasses.fields(cls))
    unknown = set(data.keys()) - known
    if len(unknown) > 0:
      raise ConfigError(f"Unknown config keys: {sorted(unknown)}")
    try:
      return cls(**dict(data))
    except TypeError as e:
      raise ConfigError(f"Invalid config: {e}")

def load_config_file(path: str) -> Dict[str, Any]:
  """Read a flat key/value YAML config file.

  Args:
      path (str): File path.

  Raises:
      ConfigError: The file cannot be read, is not a mapping, or has nested values.

  Returns:
      Dict[str, Any]: The key/value pairs.
  """
  try:
    with open(path, 'r', encoding='utf-8') as f:
      data = yaml.safe_load(f)
  except OSError as e:
    raise ConfigError(f"Cannot read config file {path}: {e}")
  except yaml.YAMLError as e:
    raise ConfigError(f"Config file {path} is not valid YAML: {e}")
  if data is None:
    return {}
  if not isinstance(data, dict):
    raise ConfigError(f"Config file {path} must contain a key/value mapping")
  for k, v in data.items():
    if isinstance(v, (dict, list)):
      raise ConfigError(f"Config file {path}: key '{k}' must have a scalar value")
  return dict(data)

RUN_KEYS: Tuple[str, ...] = (
    'source', 'target', 'model', 'forecasts', 'out', 'seed', 'trials', 'topk',
    'metric', 'unchecked', 'holdout', 'allow_freq_mismatch', 'anchor_global',
    'selection_series', 'ensemble', 'search_space',
  )
"""Config-file keys that belong to RunConfig rather than TrainConfig"""

@dataclass
class RunConfig:
  """Everything one command-line invocation needs"""

  command: str
  source: Optional[str] = None
  """Source dataset (records file; metadata is read from the sidecar)"""
  target: Optional[str] = None
  model: Optional[str] = None
  forecasts: Optional[str] = None
  out: str = 'out'
  seed: int = 0
  trials: int = 8
  topk: int = 10
  metric: str = 'smape'
  unchecked: bool = False
  holdout: bool = True
  allow_freq_mismatch: bool = False
  anchor_global: bool = False
  selection_series: int = 8000
  ensemble: bool = False
  search_space: Optional[str] = None
  """YAML file with SearchSpace ranges; the competition-scale space if None"""
  train: TrainConfig = field(default_factory=TrainConfig)

  def seeds(self) -> Tuple[int, int]:
    """(seed_init, seed_batch): explicit values, or streams derived from the master seed"""
    derived = np.random.SeedSequence(self.seed).generate_state(2)
    seed_init = int(derived[0]) if self.train.seed_init is None else self.train.seed_init
    seed_batch = int(derived[1]) if self.train.seed_batch is None else self.train.seed_batch
    return seed_init, seed_batch

  def resolved_train(self) -> TrainConfig:
    """The train config with both seeds filled in"""
    seed_init, seed_batch = self.seeds()
    return dataclasses.replace(self.train, seed_init=seed_init, seed_batch=seed_batch)

  def to_dict(self) -> JsonableDict:
    result = dict((k, getattr(self, k)) for k in ('command',) + RUN_KEYS)
    result['train'] = self.resolved_train().to_dict()
    return result

  @classmethod
  def from_mapping(cls, command: str, data: Mapping[str, Any]) -> 'RunConfig':
    """Split a flat mapping into run keys and train keys"""
    run_values = dict((k, v) for k, v in data.items() if k in RUN_KEYS)
    train_values = dict((k, v) for k, v in data.items() if not k in RUN_KEYS)
    return cls(command=command, train=TrainConfig.from_mapping(train_values), **run_values)

  def validate(self) -> 'RunConfig':
    if not self.metric in ('smape', 'nd', 'mape'):
      raise ConfigError(f"Invalid config field 'metric'={self.metric!r}: must be smape, nd or mape")
    if self.trials < 1:
      raise ConfigError(f"Invalid config field 'trials'={self.trials!r}: must be >= 1")
    if self.topk < 1:
      raise ConfigError(f"Invalid config field 'topk'={self.topk!r}: must be >= 1")
    # search candidates are checked per trial against the search space in use
    structural_only = self.unchecked or self.command in ('gradcheck', 'search')
    self.train.validate(None if structural_only else DEFAULT_SEARCH_SPACE)
    return self

def describe(config: TrainConfig) -> List[str]:
  """Short 'key=value' strings for the fields that differ from the defaults"""
  default = TrainConfig()
  return [
      f"{f.name}={getattr(config, f.name)}" for f in dataclasses.fields(config)
        if getattr(config, f.name) != getattr(default, f.name)
    ]
