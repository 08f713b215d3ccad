#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""
Forecast accuracy metrics (sMAPE, ND, MAPE), their horizon-and-size weighted
aggregation over sub-datasets, median ensembling of several models, top-k
reports with a normal-approximation confidence interval, and the forecast and
report export formats.

Metric functions take (series x horizon) arrays of forecasts and targets, or
one-dimensional arrays for a single series.
"""

from typing import Optional, List, Dict, Tuple, Sequence, Mapping, Callable

import os
import json
import math
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml

from .typehints import FloatArray, JsonableDict
from .exceptions import DataError, ConfigError
from .dataset import TimeSeries

logger = logging.getLogger(__name__)

METRICS: Tuple[str, ...] = ('smape', 'nd', 'mape')

CI_Z: float = 1.96
"""Normal quantile of the two-sided 95% confidence interval"""

def _as_2d(forecasts: FloatArray, targets: FloatArray) -> Tuple[FloatArray, FloatArray]:
  f = np.asarray(forecasts, dtype=np.float64)
  z = np.asarray(targets, dtype=np.float64)
  if f.ndim == 1:
    f = f[None, :]
  if z.ndim == 1:
    z = z[None, :]
  if f.shape != z.shape:
    raise DataError(f"Forecasts of shape {f.shape} are not aligned with targets of shape {z.shape}")
  if f.shape[1] < 1:
    raise DataError("Metrics need a horizon of at least one step")
  return f, z

def smape_metric(forecasts: FloatArray, targets: FloatArray) -> float:
  """(1/|D|)·Σ_series (200/H)·Σ_i |z − ẑ|/(|z| + |ẑ|); 0/0 terms count as 0"""
  f, z = _as_2d(forecasts, targets)
  denominator = np.abs(z) + np.abs(f)
  # a zero denominator implies a zero numerator
  denominator[denominator == 0.0] = 1.0
  per_series = 200.0 * np.mean(np.abs(f - z) / denominator, axis=1)
  return float(np.mean(per_series))

def nd_metric(forecasts: FloatArray, targets: FloatArray) -> float:
  """Σ|z − ẑ| / Σ|z| over every series and step

  Raises:
      DataError: Every target is zero, so the metric is undefined.
  """
  f, z = _as_2d(forecasts, targets)
  total = float(np.sum(np.abs(z)))
  if total == 0.0:
    raise DataError("ND is undefined: all targets are zero")
  return float(np.sum(np.abs(f - z))) / total

def mape_metric(forecasts: FloatArray, targets: FloatArray, item_ids: Optional[Sequence[str]]=None) -> float:
  """(1/|D|)·Σ_series (100/H)·Σ_i |z − ẑ|/|z|

  Raises:
      DataError: Some target is zero; the offending (series, step) pairs are listed.
  """
  f, z = _as_2d(forecasts, targets)
  zero = np.argwhere(z == 0.0)
  if zero.shape[0] > 0:
    ids = list(item_ids) if not item_ids is None else [str(i) for i in range(z.shape[0])]
    where = ', '.join(f"({ids[int(row)]}, {int(col) + 1})" for row, col in zero[:20])
    more = '' if zero.shape[0] <= 20 else f" and {zero.shape[0] - 20} more"
    raise DataError(f"MAPE is undefined for zero targets at (series, step): {where}{more}")
  per_series = 100.0 * np.mean(np.abs(f - z) / np.abs(z), axis=1)
  return float(np.mean(per_series))

def metric_function(kind: str) -> Callable[[FloatArray, FloatArray], float]:
  if kind == 'smape':
    return smape_metric
  if kind == 'nd':
    return nd_metric
  if kind == 'mape':
    return mape_metric
  raise ConfigError(f"Unknown metric {kind!r}; expected one of {METRICS}")

def aggregate(values: Sequence[float], horizons: Sequence[int], counts: Sequence[int]) -> float:
  """Σ H_D·|D|·metric_D / Σ H_D·|D| over sub-datasets D

  Raises:
      DataError: No sub-datasets, mismatched argument lengths, or zero total weight.
  """
  if len(values) == 0:
    raise DataError("Cannot aggregate an empty set of metrics")
  if not len(values) == len(horizons) == len(counts):
    raise DataError(f"aggregate needs one horizon and count per value, got {len(values)}, {len(horizons)}, {len(counts)}")
  weights = np.array([h * n for h, n in zip(horizons, counts)], dtype=np.float64)
  total = float(np.sum(weights))
  if total <= 0.0:
    raise DataError("aggregate weights sum to zero")
  return float(np.sum(weights * np.asarray(values, dtype=np.float64)) / total)

@dataclass
class ForecastSet:
  """Forecasts of one model for every series of one dataset"""

  model_id: str
  dataset_id: str
  forecasts: Dict[str, FloatArray] = field(default_factory=dict)
  """item_id -> forecast vector; insertion order is the export order"""

  @property
  def item_ids(self) -> List[str]:
    return list(self.forecasts.keys())

  @property
  def horizon(self) -> int:
    """The common forecast length

    Raises:
        DataError: The set is empty or lengths differ.
    """
    lengths = set(int(v.shape[0]) for v in self.forecasts.values())
    if len(lengths) != 1:
      raise DataError(f"Forecast set {self.model_id} has horizons {sorted(lengths)}; expected exactly one")
    return lengths.pop()

  def add(self, item_id: str, forecast: FloatArray) -> None:
    if item_id in self.forecasts:
      raise DataError(f"Duplicate forecast for item {item_id}")
    self.forecasts[item_id] = np.asarray(forecast, dtype=np.float64)

  def matrix(self, item_ids: Sequence[str]) -> FloatArray:
    """Forecasts stacked in the order of item_ids

    Raises:
        DataError: Ids are missing or extra.
    """
    missing = [i for i in item_ids if not i in self.forecasts]
    extra = sorted(set(self.forecasts.keys()) - set(item_ids))
    if len(missing) > 0 or len(extra) > 0:
      raise DataError(f"Forecast set {self.model_id} is misaligned: missing {missing[:10]}, unexpected {extra[:10]}")
    if self.horizon < 1:
      raise DataError(f"Forecast set {self.model_id} has empty forecasts")
    return np.stack([self.forecasts[i] for i in item_ids])

def holdout_targets(series: Sequence[TimeSeries], horizon: int) -> Dict[str, FloatArray]:
  """The last horizon observations of each series, keyed by item id"""
  result: Dict[str, FloatArray] = {}
  for s in series:
    if len(s) < horizon:
      raise DataError(f"Series {s.item_id} of length {len(s)} is shorter than the horizon {horizon}")
    result[s.item_id] = s.values[len(s) - horizon:].copy()
  return result

def score(forecast_set: ForecastSet, targets: Mapping[str, FloatArray], metric: str) -> float:
  """One metric of a forecast set against aligned targets"""
  ids = list(targets.keys())
  f = forecast_set.matrix(ids)
  z = np.stack([np.asarray(targets[i], dtype=np.float64) for i in ids])
  if metric == 'mape':
    return mape_metric(f, z, ids)
  return metric_function(metric)(f, z)

def ensemble_median(sets: Sequence[ForecastSet], k: Optional[int]=None, model_id: Optional[str]=None) -> ForecastSet:
  """Elementwise median of the first k forecast sets (all of them by default).

  For even k the median is the mean of the two central values.

  Raises:
      DataError: No sets, k out of range, or the sets are not aligned.
  """
  if len(sets) == 0:
    raise DataError("ensemble_median needs at least one forecast set")
  k = len(sets) if k is None else k
  if k < 1 or k > len(sets):
    raise DataError(f"ensemble_median: k={k} outside [1, {len(sets)}]")
  chosen = list(sets[:k])
  ids = chosen[0].item_ids
  stacked = np.stack([s.matrix(ids) for s in chosen])
  median = np.median(stacked, axis=0)
  result = ForecastSet(
      model_id if not model_id is None else f"median({','.join(s.model_id for s in chosen)})",
      chosen[0].dataset_id,
    )
  for row, item_id in enumerate(ids):
    result.add(item_id, median[row])
  return result

@dataclass
class MetricReport:
  """Per-model scores of one metric on one dataset, with their summary"""

  dataset: str
  metric: str
  per_model: Dict[str, float]
  mean: float
  ci: float
  """Half-width of the 95% interval around mean"""
  ensemble: Optional[float] = None
  """Score of the median ensemble of all models, if computed"""

  @property
  def models(self) -> List[str]:
    return list(self.per_model.keys())

  def to_dict(self) -> JsonableDict:
    return dict(
        dataset=self.dataset,
        metric=self.metric,
        models=self.models,
        per_model=dict(self.per_model),
        value=self.mean,
        ci=self.ci,
        ensemble=self.ensemble,
      )

  def save(self, path: str) -> None:
    write_atomic(path, yaml.dump(self.to_dict(), sort_keys=True, default_flow_style=False))

def confidence_interval(scores: Sequence[float]) -> Tuple[float, float]:
  """(mean, 1.96·s/√k) using the sample standard deviation; the half-width is 0 for a single score"""
  values = np.asarray(scores, dtype=np.float64)
  if values.size == 0:
    raise DataError("No scores to summarize")
  if values.size == 1:
    return float(values[0]), 0.0
  return float(np.mean(values)), CI_Z * float(np.std(values, ddof=1)) / math.sqrt(values.size)

def report(
      models: Sequence[ForecastSet],
      targets: Mapping[str, FloatArray],
      metric: str,
      dataset_id: str='',
      ensemble: bool=True
    ) -> MetricReport:
  """Score every model, summarize as mean ± CI, and optionally score their median ensemble.

  Raises:
      DataError: No models, or forecasts are misaligned with the targets.
      ConfigError: Unknown metric.
  """
  if len(models) == 0:
    raise DataError("report needs at least one model")
  metric_function(metric)
  per_model: Dict[str, float] = {}
  for m in models:
    per_model[m.model_id] = score(m, targets, metric)
  mean, ci = confidence_interval(list(per_model.values()))
  ensemble_score = score(ensemble_median(models), targets, metric) if ensemble else None
  if not ensemble_score is None and ensemble_score > max(per_model.values()):
    logger.info(f"Ensemble {metric} {ensemble_score:.4f} is worse than every individual model")
  return MetricReport(dataset_id or models[0].dataset_id, metric, per_model, mean, ci, ensemble_score)

def write_atomic(path: str, content: str) -> None:
  """Write a text file through a temporary file and a rename"""
  tmp_path = path + '.tmp'
  with open(tmp_path, 'w', encoding='utf-8') as f:
    f.write(content)
  os.replace(tmp_path, path)

def write_forecasts(path: str, forecast_set: ForecastSet, first_timestamps: Optional[Mapping[str, Tuple[pd.Timestamp, pd.DateOffset]]]=None) -> None:
  """Export one JSON line per (series, step): {item_id, t, forecast} plus timestamp when known.

  Args:
      path (str): Output file.
      forecast_set (ForecastSet): The forecasts.
      first_timestamps (optional): item_id -> (timestamp of step 1, step offset).
  """
  lines: List[str] = []
  for item_id, values in forecast_set.forecasts.items():
    stamp = None if first_timestamps is None else first_timestamps.get(item_id, None)
    for t, value in enumerate(values, start=1):
      row: JsonableDict = dict(item_id=item_id, t=t, forecast=float(value))
      if not stamp is None:
        row['timestamp'] = str(stamp[0] + (t - 1) * stamp[1])
      lines.append(json.dumps(row, sort_keys=True))
  write_atomic(path, ''.join(line + '\n' for line in lines))

def read_forecasts(path: str, model_id: str='', dataset_id: str='') -> ForecastSet:
  """Parse a forecast export back into a ForecastSet

  Raises:
      DataError: The file is unreadable, a row is malformed, or steps are not 1..H in order.
  """
  rows: Dict[str, List[Tuple[int, float]]] = {}
  try:
    with open(path, 'r', encoding='utf-8') as f:
      lines = f.readlines()
  except OSError as e:
    raise DataError(f"Cannot read forecasts {path}: {e}")
  for line_number, line in enumerate(lines, start=1):
    if line.strip() == '':
      continue
    try:
      row = json.loads(line)
      item_id, t, value = str(row['item_id']), int(row['t']), float(row['forecast'])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
      raise DataError(f"{path} line {line_number}: malformed forecast row: {e}")
    rows.setdefault(item_id, []).append((t, value))
  result = ForecastSet(model_id or os.path.basename(path), dataset_id)
  for item_id, steps in rows.items():
    steps.sort()
    if [t for t, _ in steps] != list(range(1, len(steps) + 1)):
      raise DataError(f"{path}: forecast steps of item {item_id} are not 1..{len(steps)}")
    result.add(item_id, np.array([v for _, v in steps], dtype=np.float64))
  return result
