#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""
Time-series datasets: ingestion of newline-delimited JSON records with a
metadata sidecar, train/test splitting, random training slices, and the lag,
age and log-scale covariates fed to the representation network.

Window coordinates
------------------
A ForecastTask covers context_len + horizon window positions t = 1..context_len+horizon.
Position t corresponds to series index s = t0 - context_len + t (1-based), so the
context ends at position context_len, which is series index t0. Positions with
s <= 0 are left padding: their targets are zero and they never enter the local
ridge fit.
"""

from typing import Optional, List, Dict, Tuple, Sequence, Iterable, Any

import os
import json
import math
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml

from .typehints import FloatArray
from .exceptions import DataError, ConfigError
from .frequency import Frequency, parse_frequency
from .config import CovariateConfig

logger = logging.getLogger(__name__)

@dataclass(frozen=True, eq=False)
class TimeSeries:
  """A single univariate series"""

  item_id: str
  start: pd.Timestamp
  freq: Frequency
  values: FloatArray
  """Observations z_1..z_T; finite, T >= 1"""

  def __len__(self) -> int:
    return int(self.values.shape[0])

  def truncated(self, length: int) -> 'TimeSeries':
    """The first length observations"""
    return TimeSeries(self.item_id, self.start, self.freq, self.values[:length].copy())

  def scaled_by(self, factor: float) -> 'TimeSeries':
    return TimeSeries(self.item_id, self.start, self.freq, self.values * factor)

@dataclass(frozen=True)
class DatasetMetadata:
  """Contents of the metadata sidecar of a dataset"""

  freq: Frequency
  prediction_length: int

def load_metadata(path: str) -> DatasetMetadata:
  """Read a metadata sidecar ({"freq": "M", "prediction_length": 18}); JSON or YAML.

  Raises:
      DataError: The file is unreadable, or lacks or has invalid fields.
  """
  try:
    with open(path, 'r', encoding='utf-8') as f:
      data = yaml.safe_load(f)
  except (OSError, yaml.YAMLError) as e:
    raise DataError(f"Cannot read dataset metadata {path}: {e}")
  if not isinstance(data, dict) or not 'freq' in data or not 'prediction_length' in data:
    raise DataError(f"Dataset metadata {path} must define freq and prediction_length")
  prediction_length = data['prediction_length']
  if not isinstance(prediction_length, int) or prediction_length < 1:
    raise DataError(f"Dataset metadata {path}: invalid prediction_length {prediction_length!r}")
  return DatasetMetadata(parse_frequency(str(data['freq'])), prediction_length)

def find_metadata(records_path: str) -> str:
  """Locate the metadata sidecar of a records file.

  Tried in order: '<records>.metadata.json', 'metadata.json' next to the
  records, and 'metadata.json' one directory up (the GluonTS 'train/' layout).

  Raises:
      DataError: No sidecar exists.
  """
  directory = os.path.dirname(os.path.abspath(records_path))
  candidates = [
      records_path + '.metadata.json',
      os.path.join(directory, 'metadata.json'),
      os.path.join(os.path.dirname(directory), 'metadata.json'),
    ]
  for candidate in candidates:
    if os.path.isfile(candidate):
      return candidate
  raise DataError(f"No metadata sidecar found for {records_path}")

def _parse_record(record: Any, line_number: int, freq: Frequency) -> Tuple[Optional[str], TimeSeries]:
  if not isinstance(record, dict):
    raise DataError(f"Line {line_number}: record is not an object")
  if not 'start' in record or not 'target' in record:
    raise DataError(f"Line {line_number}: record requires 'start' and 'target'")
  try:
    start = pd.Timestamp(record['start'])
  except (ValueError, TypeError) as e:
    raise DataError(f"Line {line_number}: invalid start {record['start']!r}: {e}")
  target = record['target']
  if not isinstance(target, list) or len(target) == 0:
    raise DataError(f"Line {line_number}: target must be a non-empty array")
  try:
    values = np.array([float(x) for x in target], dtype=np.float64)
  except (ValueError, TypeError):
    raise DataError(f"Line {line_number}: target contains a non-numeric entry")
  if not np.all(np.isfinite(values)):
    raise DataError(f"Line {line_number}: target contains a non-finite entry")
  item_id = record.get('item_id', None)
  return (None if item_id is None else str(item_id)), TimeSeries('', start, freq, values)

def load_dataset(path: str, metadata: DatasetMetadata) -> List[TimeSeries]:
  """Parse a newline-delimited JSON records file.

  Each non-blank line is an object with 'start' (ISO-8601 string), 'target'
  (array of numbers) and an optional 'item_id'. Missing ids are synthesized
  from the record position; repeated ids get a '#n' suffix.

  Args:
      path (str): Records file.
      metadata (DatasetMetadata): Frequency of the records.

  Raises:
      DataError: The file cannot be read, or a record is malformed (the line
                 number is reported).

  Returns:
      List[TimeSeries]: The series, in file order. An empty file gives an empty list.
  """
  result: List[TimeSeries] = []
  seen: Dict[str, int] = {}
  try:
    with open(path, 'r', encoding='utf-8') as f:
      lines = f.readlines()
  except OSError as e:
    raise DataError(f"Cannot read dataset {path}: {e}")
  for line_number, line in enumerate(lines, start=1):
    if line.strip() == '':
      continue
    try:
      record = json.loads(line)
    except json.JSONDecodeError as e:
      raise DataError(f"Line {line_number}: malformed record: {e}")
    item_id, series = _parse_record(record, line_number, metadata.freq)
    if item_id is None:
      item_id = str(len(result))
    if item_id in seen:
      seen[item_id] += 1
      item_id = f"{item_id}#{seen[item_id]}"
    seen[item_id] = 0
    result.append(TimeSeries(item_id, series.start, series.freq, series.values))
  logger.debug(f"Loaded {len(result)} series from {path}")
  return result

def save_dataset(path: str, dataset: Iterable[TimeSeries], metadata: Optional[DatasetMetadata]=None) -> None:
  """Write series as newline-delimited JSON records, plus a '<path>.metadata.json' sidecar if metadata is given"""
  with open(path, 'w', encoding='utf-8') as f:
    for series in dataset:
      record = dict(
          item_id=series.item_id,
          start=str(series.start),
          target=[float(x) for x in series.values],
        )
      f.write(json.dumps(record) + '\n')
  if not metadata is None:
    with open(path + '.metadata.json', 'w', encoding='utf-8') as f:
      json.dump(dict(freq=metadata.freq.token, prediction_length=metadata.prediction_length), f)

def compute_scale(context: Sequence[float], pad_count: int=0) -> float:
  """Mean absolute value of the non-padded context entries; 1.0 when that mean is 0.

  Args:
      context (Sequence[float]): The context window, padding first.
      pad_count (int, optional): Number of leading padding entries to ignore. Defaults to 0.

  Returns:
      float: A strictly positive scale.
  """
  real = np.asarray(context, dtype=np.float64)[pad_count:]
  if real.size == 0:
    return 1.0
  result = float(np.mean(np.abs(real)))
  return result if result > 0.0 else 1.0

@dataclass
class ForecastTask:
  """A context/horizon split of one series"""

  series: TimeSeries
  t0: int
  """Split index: number of series observations up to and including the end of the context"""
  horizon: int
  context_len: int
  scale: float = field(init=False)
  pad_count: int = field(init=False)

  def __post_init__(self) -> None:
    if self.t0 < 1:
      raise DataError(f"Series {self.series.item_id}: split index {self.t0} leaves no context")
    if self.t0 > len(self.series):
      raise DataError(f"Series {self.series.item_id}: split index {self.t0} beyond series length {len(self.series)}")
    if self.horizon < 1 or self.context_len < 1:
      raise ConfigError(f"Task needs horizon >= 1 and context_len >= 1, got {self.horizon}, {self.context_len}")
    self.pad_count = max(0, self.context_len - self.t0)
    self.scale = compute_scale(self.context_window, self.pad_count)

  @property
  def length(self) -> int:
    """Number of window positions (context plus horizon)"""
    return self.context_len + self.horizon

  @property
  def offset(self) -> int:
    """Series index of window position 0 (window position t is series index offset + t)"""
    return self.t0 - self.context_len

  @property
  def context_window(self) -> FloatArray:
    """z over the context positions, zeros for padding"""
    result = np.zeros(self.context_len, dtype=np.float64)
    real = self.context_len - self.pad_count
    result[self.pad_count:] = self.series.values[self.t0 - real:self.t0]
    return result

  @property
  def context_mask(self) -> FloatArray:
    """1.0 for real context positions, 0.0 for padding"""
    result = np.ones(self.context_len, dtype=np.float64)
    result[:self.pad_count] = 0.0
    return result

  @property
  def has_targets(self) -> bool:
    return self.t0 + self.horizon <= len(self.series)

  @property
  def horizon_targets(self) -> FloatArray:
    """z_{t0+1..t0+H}

    Raises:
        DataError: The series ends before the horizon does.
    """
    if not self.has_targets:
      raise DataError(f"Series {self.series.item_id} has no observations for the whole horizon")
    return self.series.values[self.t0:self.t0 + self.horizon].copy()

  def observation(self, s: int) -> float:
    """z_s for 1 <= s <= t0; 0.0 before the start of the series"""
    if s < 1:
      return 0.0
    if s > self.t0:
      raise DataError(f"Observation {s} of series {self.series.item_id} is past the split index {self.t0}")
    return float(self.series.values[s - 1])

def covariate_dim(lags: Sequence[int], config: CovariateConfig) -> int:
  """p = |lags| + age + (log_scale if enabled)"""
  return len(lags) + 1 + (1 if config.log_scale else 0)

@dataclass(frozen=True, eq=False)
class CovariateVector:
  """Covariates x_t of one window position"""

  lagged_values: FloatArray
  """Scaled lag values aligned to the lag list"""
  age: float
  log_scale: Optional[float]
  """ln(scale), or None when the covariate is disabled"""

  @property
  def dimension(self) -> int:
    return int(self.lagged_values.shape[0]) + 1 + (0 if self.log_scale is None else 1)

  def as_array(self) -> FloatArray:
    extra = [self.age] if self.log_scale is None else [self.age, self.log_scale]
    return np.concatenate([self.lagged_values, np.array(extra, dtype=np.float64)])

def _age(task: ForecastTask, t: int, config: CovariateConfig) -> float:
  age = float(task.offset + t - 1)
  return age / task.context_len if config.normalize_age else age

def make_covariates(
      task: ForecastTask,
      t: int,
      forecasts_so_far: Sequence[float],
      lags: Sequence[int],
      config: CovariateConfig=CovariateConfig()
    ) -> CovariateVector:
  """Covariates at window position t.

  Each lag slot reads, for source index src = s - lag: the scaled observation if
  1 <= src <= t0, the scaled prior forecast for horizon step src - t0 if
  t0 < src, and 0 if src falls before the series start (padding).

  Args:
      task (ForecastTask): The task.
      t (int): Window position in [1, context_len + horizon].
      forecasts_so_far (Sequence[float]): Descaled forecasts for horizon steps 1, 2, ...
      lags (Sequence[int]): The lag list.
      config (CovariateConfig, optional): Covariate switches.

  Raises:
      DataError: t is out of range, or a needed forecast has not been produced yet.

  Returns:
      CovariateVector: The covariates.
  """
  if t < 1 or t > task.length:
    raise DataError(f"Window position {t} outside [1, {task.length}]")
  s = task.offset + t
  slots = np.zeros(len(lags), dtype=np.float64)
  for i, lag in enumerate(lags):
    src = s - lag
    if src < 1:
      continue
    if src <= task.t0:
      slots[i] = task.observation(src) / task.scale
    else:
      step = src - task.t0
      if step > len(forecasts_so_far):
        raise DataError(f"Lag {lag} at position {t} needs the forecast for horizon step {step}, which is not available yet")
      slots[i] = float(forecasts_so_far[step - 1]) / task.scale
  return CovariateVector(
      lagged_values=slots,
      age=_age(task, t, config),
      log_scale=math.log(task.scale) if config.log_scale else None,
    )

ForecastSlots = Dict[int, List[Tuple[int, int]]]
"""Window position -> [(covariate column, horizon step whose forecast fills it)]"""

def covariate_matrix(
      task: ForecastTask,
      lags: Sequence[int],
      config: CovariateConfig,
      horizon_values: Optional[Sequence[float]]=None
    ) -> Tuple[FloatArray, ForecastSlots]:
  """Covariates of every window position at once.

  Lag slots that need a forecast are left at 0 and reported in the returned
  slot map, unless horizon_values (descaled true observations, for teacher
  forcing) is given, in which case they are filled from it and the map is empty.

  Args:
      task (ForecastTask): The task.
      lags (Sequence[int]): The lag list.
      config (CovariateConfig): Covariate switches.
      horizon_values (Optional[Sequence[float]], optional): Values for horizon steps. Defaults to None.

  Returns:
      Tuple[FloatArray, ForecastSlots]: The (length x p) matrix and the forecast slot map.
  """
  p = covariate_dim(lags, config)
  result = np.zeros((task.length, p), dtype=np.float64)
  slots: ForecastSlots = {}
  history = task.series.values[:task.t0] / task.scale
  future = None if horizon_values is None else np.asarray(horizon_values, dtype=np.float64) / task.scale
  positions = np.arange(1, task.length + 1)
  series_index = task.offset + positions
  for i, lag in enumerate(lags):
    src = series_index - lag
    observed = (src >= 1) & (src <= task.t0)
    result[observed, i] = history[src[observed] - 1]
    for t in positions[src > task.t0]:
      step = int(src[t - 1] - task.t0)
      if future is None:
        slots.setdefault(int(t), []).append((i, step))
      else:
        result[t - 1, i] = future[step - 1]
  ages = (series_index - 1).astype(np.float64)
  result[:, len(lags)] = ages / task.context_len if config.normalize_age else ages
  if config.log_scale:
    result[:, len(lags) + 1] = math.log(task.scale)
  return result, slots

def is_trainable(series: TimeSeries, horizon: int, min_history: int) -> bool:
  """True if some split leaves min_history real context points and a full horizon"""
  return len(series) - horizon >= min_history

def sample_slice(
      series: TimeSeries,
      context_len: int,
      horizon: int,
      min_history: int,
      rng: np.random.Generator
    ) -> ForecastTask:
  """Draw a random training slice.

  The split index is uniform over [min_history, T - horizon], so the horizon
  always ends inside the series and at least min_history real observations land
  in the context. Shorter histories are left-padded with zeros.

  Args:
      series (TimeSeries): Source series.
      context_len (int): Context window length (>= 1).
      horizon (int): Horizon length (>= 1).
      min_history (int): Minimum real observations in the context (<= context_len).
      rng (np.random.Generator): Source of randomness.

  Raises:
      ConfigError: Inconsistent lengths.
      DataError: The series is too short for any admissible split.

  Returns:
      ForecastTask: The slice.
  """
  if context_len < 1 or horizon < 1 or min_history < 1:
    raise ConfigError(f"sample_slice needs positive lengths, got context {context_len}, horizon {horizon}, min history {min_history}")
  if min_history > context_len:
    raise ConfigError(f"min_history {min_history} exceeds context length {context_len}")
  high = len(series) - horizon
  if high < min_history:
    raise DataError(
        f"Series {series.item_id} of length {len(series)} admits at most {max(high, 0)} real context "
        f"points with horizon {horizon}, fewer than min_history {min_history}"
      )
  t0 = int(rng.integers(min_history, high + 1))
  return ForecastTask(series, t0, horizon, context_len)

def prediction_task(series: TimeSeries, context_len: int, horizon: int) -> ForecastTask:
  """A task forecasting horizon steps past the end of series, using all of it as history"""
  return ForecastTask(series, len(series), horizon, context_len)

def holdout_task(series: TimeSeries, context_len: int, horizon: int) -> ForecastTask:
  """A task whose horizon is the last horizon observations of series

  Raises:
      DataError: The series is not longer than the horizon.
  """
  if len(series) <= horizon:
    raise DataError(f"Series {series.item_id} of length {len(series)} is too short for a holdout of {horizon}")
  return ForecastTask(series, len(series) - horizon, horizon, context_len)

@dataclass
class DatasetSplit:
  """Train series (tails removed) and test series (full, evaluated on their last horizon points)"""

  train: List[TimeSeries]
  test: List[TimeSeries]
  horizon: int

def split_train_test(dataset: Sequence[TimeSeries], horizon: int) -> DatasetSplit:
  """Remove the last horizon observations of every series to form the train split.

  Series with length <= horizon are dropped from both splits with a warning.

  Raises:
      ConfigError: horizon < 1.
  """
  if horizon < 1:
    raise ConfigError(f"Split horizon must be >= 1, got {horizon}")
  train: List[TimeSeries] = []
  test: List[TimeSeries] = []
  for series in dataset:
    if len(series) <= horizon:
      logger.warning(f"Series {series.item_id} of length {len(series)} dropped: not longer than horizon {horizon}")
      continue
    train.append(series.truncated(len(series) - horizon))
    test.append(series)
  return DatasetSplit(train, test, horizon)
