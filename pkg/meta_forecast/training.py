#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""
Estimation of the global parameters: the sMAPE training loss, an ADAM optimizer
with global-norm clipping and decoupled weight decay, periodic checkpoints, and
the training loop that averages the last checkpoints into the final model.
"""

from typing import Optional, List, Dict, Sequence, Callable, TextIO

import os
import math
import time
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import yaml

from .typehints import FloatArray, JsonableDict
from .exceptions import DataError, NumericError, ShapeError
from .config import TrainConfig
from .frequency import Frequency
from .dataset import TimeSeries, ForecastTask, is_trainable, sample_slice, holdout_task
from .params import GlobalParams, ModelSpec, average_params
from .model import rollout, predict
from .evaluation import smape_metric
from .autodiff import (
    Tape, Value, ScalarFunction, absolute, mean, getitem, reshape, grad_check, autodiff_gradient
  )

logger = logging.getLogger(__name__)

MAX_CONSECUTIVE_SKIPS: int = 100
"""Training aborts once this many steps in a row had to be skipped"""

def smape_terms(forecast: Value, target: FloatArray) -> Value:
  """|z − ẑ| / (|z| + |ẑ|) elementwise, with 0 where both are 0"""
  target = np.asarray(target, dtype=np.float64)
  if forecast.shape != target.shape:
    raise ShapeError(f"sMAPE forecast shape {forecast.shape} does not match target shape {target.shape}")
  error = absolute(forecast - target)
  denominator = absolute(forecast) + np.abs(target)
  # 0/0 terms have a zero numerator as well
  safe = denominator + (denominator.data == 0.0).astype(np.float64)
  return error / safe

def smape_loss(forecast: Value, target: FloatArray) -> Value:
  """The 200-scaled sMAPE divided by 100: (2/H)·Σ|z − ẑ|/(|z| + |ẑ|), averaged over the rows of a batch.

  Args:
      forecast (Value): (H,) or (batch x H) forecasts.
      target (FloatArray): Observations of the same shape.

  Raises:
      ShapeError: Shapes differ, or the horizon is empty.

  Returns:
      Value: Scalar loss in [0, 2].
  """
  if forecast.data.size == 0:
    raise ShapeError("sMAPE of an empty horizon")
  return 2.0 * mean(smape_terms(forecast, target))

@dataclass
class OptimizerState:
  """ADAM moment accumulators"""

  m: Dict[str, FloatArray]
  v: Dict[str, FloatArray]
  step: int = 0
  """Number of adam_step calls, including skipped ones"""
  updates: int = 0
  """Number of applied updates; drives bias correction"""

  @classmethod
  def zeros(cls, params: GlobalParams) -> 'OptimizerState':
    return cls(
        dict((k, np.zeros_like(t)) for k, t in params.tensors.items()),
        dict((k, np.zeros_like(t)) for k, t in params.tensors.items()),
      )

@dataclass
class StepResult:
  params: GlobalParams
  grad_norm: float
  """Global gradient norm before clipping (nan when the step was skipped)"""
  clipped_norm: float
  skipped: bool

def global_norm(grads: Dict[str, FloatArray]) -> float:
  return math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))

def adam_step(
      params: GlobalParams,
      grads: Dict[str, FloatArray],
      state: OptimizerState,
      lr: float,
      clip_norm: float=10.0,
      weight_decay: float=1e-8,
      beta1: float=0.9,
      beta2: float=0.999,
      eps: float=1e-8
    ) -> StepResult:
  """One ADAM update with global-norm gradient clipping and decoupled weight decay.

  A gradient with a non-finite entry is not applied: the parameters and moments
  are left alone, a warning is logged, and only the step counter advances.

  Args:
      params (GlobalParams): Current parameters (not modified).
      grads (Dict[str, FloatArray]): Gradient per tensor name.
      state (OptimizerState): Moments; updated in place.
      lr (float): Learning rate.
      clip_norm (float, optional): Maximum global gradient norm. Defaults to 10.0.
      weight_decay (float, optional): Decoupled decay coefficient. Defaults to 1e-8.
      beta1 (float, optional): Defaults to 0.9.
      beta2 (float, optional): Defaults to 0.999.
      eps (float, optional): Defaults to 1e-8.

  Returns:
      StepResult: New parameters and gradient statistics.
  """
  state.step += 1
  if not all(bool(np.all(np.isfinite(g))) for g in grads.values()):
    logger.warning(f"Step {state.step}: non-finite gradient, update skipped")
    return StepResult(params, float('nan'), float('nan'), True)
  norm = global_norm(grads)
  factor = clip_norm / norm if norm > clip_norm else 1.0
  state.updates += 1
  t = state.updates
  tensors: Dict[str, FloatArray] = {}
  for name in params.names:
    p = params.tensors[name]
    g = grads.get(name, np.zeros_like(p)) * factor
    state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
    state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
    m_hat = state.m[name] / (1.0 - beta1 ** t)
    v_hat = state.v[name] / (1.0 - beta2 ** t)
    decayed = p - lr * weight_decay * p
    tensors[name] = decayed - lr * m_hat / (np.sqrt(v_hat) + eps)
  return StepResult(params.with_tensors(tensors), norm, norm * factor, False)

@dataclass
class Checkpoint:
  """A snapshot of the parameters after a given step"""

  step: int
  params: GlobalParams

@dataclass
class TrainLogEntry:
  step: int
  loss: float
  grad_norm: float
  wall_ms: float
  eval_smape: Optional[float] = None

  def to_dict(self) -> JsonableDict:
    result: JsonableDict = dict(step=self.step, loss=self.loss, grad_norm=self.grad_norm, wall_ms=self.wall_ms)
    if not self.eval_smape is None:
      result['eval_smape'] = self.eval_smape
    return result

  def render(self) -> str:
    """One flow-style YAML line"""
    return yaml.dump(self.to_dict(), default_flow_style=True, sort_keys=True, width=10000).strip()

  def same_as(self, other: 'TrainLogEntry') -> bool:
    """Equality ignoring wall-clock time; nan losses compare equal"""
    def eq(a: Optional[float], b: Optional[float]) -> bool:
      if a is None or b is None:
        return a is b
      return a == b or (math.isnan(a) and math.isnan(b))
    return self.step == other.step and eq(self.loss, other.loss) and \
        eq(self.grad_norm, other.grad_norm) and eq(self.eval_smape, other.eval_smape)

@dataclass
class TrainLog:
  """The per-step training record, optionally mirrored line by line to a file"""

  entries: List[TrainLogEntry] = field(default_factory=list)
  stream: Optional[TextIO] = None

  def append(self, entry: TrainLogEntry) -> None:
    self.entries.append(entry)
    if not self.stream is None:
      self.stream.write(entry.render() + '\n')
      self.stream.flush()

  def same_as(self, other: 'TrainLog') -> bool:
    return len(self.entries) == len(other.entries) and all(
        a.same_as(b) for a, b in zip(self.entries, other.entries)
      )

  @property
  def losses(self) -> FloatArray:
    return np.array([e.loss for e in self.entries], dtype=np.float64)

  @classmethod
  def load(cls, path: str) -> 'TrainLog':
    result = cls()
    with open(path, 'r', encoding='utf-8') as f:
      for line in f:
        if line.strip() == '':
          continue
        data = yaml.safe_load(line)
        result.entries.append(TrainLogEntry(
            step=int(data['step']),
            loss=float(data['loss']),
            grad_norm=float(data['grad_norm']),
            wall_ms=float(data['wall_ms']),
            eval_smape=None if not 'eval_smape' in data else float(data['eval_smape']),
          ))
    return result

@dataclass
class TrainResult:
  params: GlobalParams
  """The final model: the average of the last checkpoints, or the live parameters if there are none"""
  live_params: GlobalParams
  log: TrainLog
  checkpoint_steps: List[int]
  skipped_steps: int

def holdout_smape(series: Sequence[TimeSeries], params: GlobalParams, horizon: int, anchor: bool=False) -> float:
  """Mean 200-scaled sMAPE of eval-mode forecasts of the last horizon points of each series"""
  if len(series) == 0:
    raise DataError("No series to score")
  forecasts = []
  targets = []
  for s in series:
    task = holdout_task(s, params.spec.context_len, horizon)
    forecasts.append(predict(task, params, anchor))
    targets.append(task.horizon_targets)
  return smape_metric(np.stack(forecasts), np.stack(targets))

def training_adaptation(adaptation: str) -> str:
  """The output layer used while training: 'ada' models are trained with the global head"""
  return 'global_head' if adaptation == 'ada' else adaptation

def train(
      dataset: Sequence[TimeSeries],
      config: TrainConfig,
      freq: Frequency,
      horizon: Optional[int]=None,
      checkpoint_dir: Optional[str]=None,
      log_stream: Optional[TextIO]=None,
      monitor: Optional[Sequence[TimeSeries]]=None,
      on_step: Optional[Callable[[int, GlobalParams], None]]=None
    ) -> TrainResult:
  """Fit the global parameters by minimizing the mean sMAPE/100 over random training slices.

  Every step draws minibatch_size series uniformly with replacement, cuts a
  random slice from each, forecasts the slice horizons with the configured
  strategy and output layer, and applies one ADAM update. Parameters are
  checkpointed every checkpoint_every steps; the result is the mean of the last
  checkpoint_average checkpoints. There is no early stopping.

  Args:
      dataset (Sequence[TimeSeries]): Training series.
      config (TrainConfig): Hyperparameters; seed_init and seed_batch default to 0.
      freq (Frequency): Frequency of the dataset (selects the lags).
      horizon (Optional[int], optional): Training horizon; config.horizon or the
                        frequency's source horizon if None.
      checkpoint_dir (Optional[str], optional): If given, each checkpoint is also
                        written there as 'checkpoint-<step>.yaml'.
      log_stream (Optional[TextIO], optional): Receives one YAML line per step.
      monitor (Optional[Sequence[TimeSeries]], optional): Series whose held-out
                        tails are scored every config.eval_every steps.
      on_step (Optional[Callable[[int, GlobalParams], None]], optional): Called
                        with the live parameters after every step.

  Raises:
      ConfigError: The configuration is not usable.
      DataError: No series is long enough to train on.
      NumericError: Too many consecutive steps were skipped.

  Returns:
      TrainResult: Final parameters, the training log and checkpoint bookkeeping.
  """
  config.validate()
  spec = ModelSpec.from_config(config, freq, horizon)
  context_len, h = spec.context_len, spec.horizon
  min_history = min(config.min_history, context_len)
  if min_history < config.min_history:
    logger.debug(f"min_history {config.min_history} lowered to the context length {context_len}")
  series = [s for s in dataset if is_trainable(s, h, min_history)]
  if len(series) < len(dataset):
    logger.warning(f"{len(dataset) - len(series)} of {len(dataset)} series are too short to train on and were dropped")
  if len(series) == 0:
    raise DataError(f"No training series has at least {min_history + h} observations")

  init_rng = np.random.default_rng(0 if config.seed_init is None else config.seed_init)
  batch_rng = np.random.default_rng(0 if config.seed_batch is None else config.seed_batch)
  params = GlobalParams.initialize(spec, init_rng)
  backbone = spec.make_backbone()
  adaptation = training_adaptation(spec.adaptation)
  state = OptimizerState.zeros(params)
  log = TrainLog(stream=log_stream)
  checkpoints: deque = deque(maxlen=config.checkpoint_average)
  checkpoint_steps: List[int] = []
  consecutive_skips = 0
  skipped = 0
  logger.info(
      f"Training {spec.backbone}/{spec.adaptation}/{spec.strategy} on {len(series)} series: "
      f"{config.num_steps} steps, batch {config.minibatch_size}, context {context_len}, horizon {h}, "
      f"{params.size} parameters"
    )

  for step in range(1, config.num_steps + 1):
    started = time.perf_counter()
    picks = batch_rng.integers(0, len(series), size=config.minibatch_size)
    tasks = [sample_slice(series[int(i)], context_len, h, min_history, batch_rng) for i in picks]
    targets = np.stack([task.horizon_targets for task in tasks])
    loss_value = float('nan')
    grads: Dict[str, FloatArray]
    try:
      tape = Tape()
      weights = params.bind(tape)
      result = rollout(tape, weights, spec, tasks, 'train', spec.strategy, adaptation, batch_rng, backbone=backbone)
      loss = smape_loss(result.forecasts, targets)
      loss_value = loss.item()
      tape.backward(loss)
      grads = dict((name, tape.grad(value)) for name, value in weights.items())
    except NumericError as e:
      logger.warning(f"Step {step}: {e}")
      grads = dict((name, np.full_like(t, np.nan)) for name, t in params.tensors.items())
    outcome = adam_step(
        params, grads, state, config.learning_rate, config.clip_norm, config.weight_decay
      )
    if outcome.skipped:
      skipped += 1
      consecutive_skips += 1
      if consecutive_skips > MAX_CONSECUTIVE_SKIPS:
        raise NumericError(f"Aborting after {consecutive_skips} consecutive non-finite steps (last at step {step})")
    else:
      consecutive_skips = 0
      params = outcome.params

    if step % config.checkpoint_every == 0:
      checkpoints.append(Checkpoint(step, params.copy()))
      checkpoint_steps.append(step)
      if not checkpoint_dir is None:
        params.save(os.path.join(checkpoint_dir, f"checkpoint-{step:06d}.yaml"), step=step)
      logger.debug(f"Checkpoint at step {step}")

    eval_smape: Optional[float] = None
    if config.eval_every > 0 and not monitor is None and len(monitor) > 0 and step % config.eval_every == 0:
      eval_smape = holdout_smape(monitor, params, h)
    wall_ms = (time.perf_counter() - started) * 1000.0
    log.append(TrainLogEntry(step, loss_value, outcome.grad_norm, wall_ms, eval_smape))
    if step % config.log_every == 0:
      extra = '' if eval_smape is None else f", eval sMAPE {eval_smape:.3f}"
      logger.info(f"Step {step}: loss {loss_value:.5f}, grad norm {outcome.grad_norm:.4f}{extra}")
    if not on_step is None:
      on_step(step, params)

  if len(checkpoints) > 0:
    final = average_params([c.params for c in checkpoints])
    logger.info(f"Final model averages checkpoints {[c.step for c in checkpoints]}")
  else:
    final = params.copy()
  return TrainResult(final, params, log, checkpoint_steps, skipped)

def bind_flat(theta: Value, params: GlobalParams) -> Dict[str, Value]:
  """Split a flat parameter Value (laid out as GlobalParams.flatten) into named tensors"""
  result: Dict[str, Value] = {}
  offset = 0
  for name in params.names:
    tensor = params.tensors[name]
    count = int(tensor.size)
    result[name] = reshape(getitem(theta, slice(offset, offset + count)), tensor.shape)
    offset += count
  return result

def pipeline_loss(
      params: GlobalParams,
      tasks: Sequence[ForecastTask],
      strategy: Optional[str]=None,
      adaptation: Optional[str]=None,
      detach_local: bool=False
    ) -> ScalarFunction:
  """The eval-mode batch training loss as a function of the flattened parameters"""
  spec = params.spec
  targets = np.stack([task.horizon_targets for task in tasks])
  chosen_strategy = spec.strategy if strategy is None else strategy
  chosen_adaptation = training_adaptation(spec.adaptation) if adaptation is None else adaptation

  def f(tape: Tape, theta: Value) -> Value:
    weights = bind_flat(theta, params)
    result = rollout(
        tape, weights, spec, tasks, 'eval', chosen_strategy, chosen_adaptation, detach_local=detach_local
      )
    return smape_loss(result.forecasts, targets)

  return f

def pipeline_gradient(params: GlobalParams, tasks: Sequence[ForecastTask], detach_local: bool=False) -> FloatArray:
  """Gradient of the batch loss with respect to the flattened parameters"""
  return autodiff_gradient(pipeline_loss(params, tasks, detach_local=detach_local), params.flatten())

def pipeline_grad_check(params: GlobalParams, tasks: Sequence[ForecastTask], eps: float=1e-6) -> float:
  """grad_check of the full forecasting loss (representation, local fit, rollout and sMAPE)"""
  return grad_check(pipeline_loss(params, tasks), params.flatten(), eps)
