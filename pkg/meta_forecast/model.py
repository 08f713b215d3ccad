#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""
The forecasting pipeline on top of a backbone.

For each task the backbone runs over the context window, producing one
representation row per position. The output weights are then obtained in one of
three ways:

  meta         per-series ridge regression of the scaled context observations on
               the non-padded context rows, with the learned regularizer gamma.
  global_head  a single d-vector w_global shared by every series.
  ada          a global-head model whose head is replaced, at prediction time
               only, by ridge regression with a fixed gamma (optionally pulled
               towards w_global instead of towards zero).

The horizon is then rolled out one step at a time. Under the iterated strategy
each clamped forecast is fed back into the lag slots that refer to it; under
teacher forcing the true horizon observations are used instead. Everything runs
batched over a list of tasks that share the same context length and horizon.
"""

from typing import Optional, List, Dict, Tuple, Sequence, Mapping

import logging
from dataclasses import dataclass

import numpy as np

from .typehints import FloatArray
from .exceptions import ConfigError, DataError, ShapeError
from .config import STRATEGIES, ADAPTATIONS
from .dataset import TimeSeries, ForecastTask, covariate_matrix, holdout_task, prediction_task
from .backbone import Backbone, LSTMState
from .params import GlobalParams, ModelSpec
from .autodiff import (
    Tape, Value, Operand, matmul, transpose, reshape, reduce_sum, relu, softplus,
    getitem, stack, place_columns, solve_spd
  )

logger = logging.getLogger(__name__)

@dataclass
class LocalWeights:
  """A per-series output layer obtained in closed form"""

  w: FloatArray
  """The d-vector w_opt"""

  def residual(self, h: FloatArray, z: FloatArray, gamma: float, anchor: Optional[FloatArray]=None) -> float:
    """max-norm of (HᵀH + γI)w − (Hᵀz + γ·anchor)"""
    d = self.w.shape[0]
    lhs = (h.T @ h + gamma * np.eye(d)) @ self.w
    rhs = h.T @ z + (0.0 if anchor is None else gamma * anchor)
    return float(np.max(np.abs(lhs - rhs)))

def fit_local(h_context: Value, z_context: Operand, gamma: Operand, anchor: Optional[Operand]=None) -> Value:
  """Closed-form ridge regression of the context targets on the context representations.

  Without an anchor this solves (HᵀH + γI)w = Hᵀz, the minimizer of
  Σ(wᵀh_t − z_t)² + γ‖w‖². With an anchor w_g it solves
  (HᵀH + γI)w = Hᵀz + γw_g, the minimizer of Σ(wᵀh_t − z_t)² + γ‖w − w_g‖².
  The result is differentiable with respect to H, z, γ and the anchor.

  Args:
      h_context (Value): (n x d) representations of the non-padded context positions.
      z_context (Operand): (n,) scaled observations at those positions.
      gamma (Operand): Scalar regularizer, > 0.
      anchor (Optional[Operand], optional): (d,) weights to shrink towards. Defaults to None.

  Raises:
      DataError: There are no context rows.
      ShapeError: Shapes are inconsistent.

  Returns:
      Value: w, of shape (d,).
  """
  tape = h_context.tape
  if len(h_context.shape) != 2:
    raise ShapeError(f"fit_local expects an (n x d) matrix, got {h_context.shape}")
  n, d = h_context.shape
  if n == 0:
    raise DataError("fit_local needs at least one non-padded context row")
  z = tape.lift(z_context)
  if z.shape != (n,):
    raise ShapeError(f"fit_local targets have shape {z.shape}, expected {(n,)}")
  g = tape.lift(gamma)
  ht = transpose(h_context)
  gram = matmul(ht, h_context) + g * np.eye(d)
  rhs = matmul(ht, reshape(z, (n, 1)))
  if not anchor is None:
    rhs = rhs + g * reshape(tape.lift(anchor), (d, 1))
  return reshape(solve_spd(gram, rhs), (d,))

def solve_local_weights(h: FloatArray, z: FloatArray, gamma: float, anchor: Optional[FloatArray]=None) -> LocalWeights:
  """fit_local on plain arrays"""
  tape = Tape(grad_enabled=False)
  w = fit_local(tape.constant(h), z, gamma, anchor)
  return LocalWeights(w.data.copy())

def represent(
      tape: Tape,
      weights: Mapping[str, Value],
      backbone: Backbone,
      covariates: FloatArray,
      mode: str='eval',
      rng: Optional[np.random.Generator]=None,
      active: Optional[FloatArray]=None,
      state: Optional[LSTMState]=None
    ) -> Tuple[List[Value], Optional[LSTMState]]:
  """Run the backbone over a block of fixed covariates.

  Args:
      tape (Tape): Tape to record on.
      weights (Mapping[str, Value]): Parameter Values.
      backbone (Backbone): The representation network.
      covariates (FloatArray): (batch x positions x p) covariates.
      mode (str, optional): 'train' or 'eval'. Defaults to 'eval'.
      rng (Optional[np.random.Generator], optional): Zoneout randomness in train mode.
      active (Optional[FloatArray], optional): (batch x positions) 0/1 mask; the
                        recurrent state is held where it is 0. Defaults to None.
      state (Optional[LSTMState], optional): State to continue from; zeros if None.

  Returns:
      Tuple[List[Value], Optional[LSTMState]]: One (batch x d) representation per
                        position, and the final state.
  """
  if covariates.ndim != 3:
    raise ShapeError(f"represent expects (batch x positions x p) covariates, got {covariates.shape}")
  if state is None:
    state = backbone.initial_state(tape, covariates.shape[0])
  result: List[Value] = []
  for j in range(covariates.shape[1]):
    column = None if active is None else active[:, j:j + 1]
    h, state = backbone.step(tape.constant(covariates[:, j, :]), state, weights, mode, rng, column)
    result.append(h)
  return result, state

@dataclass
class Rollout:
  """Everything produced by one batched forward pass"""

  forecasts: Value
  """(batch x horizon) descaled, clamped forecasts"""
  scaled: Value
  """(batch x horizon) clamped forecasts in scaled units"""
  representations: List[Value]
  """One (batch x d) Value per window position"""
  local_weights: Optional[Value]
  """(batch x d) per-series weights, or None for the global head"""

def rollout(
      tape: Tape,
      weights: Mapping[str, Value],
      spec: ModelSpec,
      tasks: Sequence[ForecastTask],
      mode: str='eval',
      strategy: str='iterated',
      adaptation: str='meta',
      rng: Optional[np.random.Generator]=None,
      gamma_fixed: Optional[float]=None,
      anchor: bool=False,
      backbone: Optional[Backbone]=None,
      detach_local: bool=False
    ) -> Rollout:
  """Batched forecasting pass over tasks sharing one context length and horizon.

  Args:
      tape (Tape): Tape to record on.
      weights (Mapping[str, Value]): Parameters bound to tape.
      spec (ModelSpec): Model description.
      tasks (Sequence[ForecastTask]): The tasks.
      mode (str, optional): 'train' or 'eval'. Defaults to 'eval'.
      strategy (str, optional): 'iterated' or 'teacher_forced'. Defaults to 'iterated'.
      adaptation (str, optional): 'meta', 'global_head' or 'ada'. Defaults to 'meta'.
      rng (Optional[np.random.Generator], optional): Zoneout randomness in train mode.
      gamma_fixed (Optional[float], optional): Regularizer for 'ada'; spec.ada_gamma if None.
      anchor (bool, optional): For 'ada', shrink towards w_global instead of zero. Defaults to False.
      backbone (Optional[Backbone], optional): Prebuilt backbone for spec.
      detach_local (bool, optional): Block gradients through the local weights, leaving
                        only the direct path from the representation. Defaults to False.

  Raises:
      ConfigError: Unknown strategy or adaptation, or no tasks.
      ShapeError: Tasks differ in context length or horizon.
      DataError: Teacher forcing on a task without horizon observations.

  Returns:
      Rollout: Forecasts and intermediate Values.
  """
  if not strategy in STRATEGIES:
    raise ConfigError(f"Unknown strategy {strategy!r}")
  if not adaptation in ADAPTATIONS:
    raise ConfigError(f"Unknown adaptation {adaptation!r}")
  if len(tasks) == 0:
    raise ConfigError("rollout needs at least one task")
  context_len, horizon = tasks[0].context_len, tasks[0].horizon
  for task in tasks:
    if task.context_len != context_len or task.horizon != horizon:
      raise ShapeError(
          f"Batched tasks must share context length and horizon: "
          f"({task.context_len}, {task.horizon}) vs ({context_len}, {horizon})"
        )
  if backbone is None:
    backbone = spec.make_backbone()
  teacher_forced = strategy == 'teacher_forced'
  matrices: List[FloatArray] = []
  slots: Dict[int, List[Tuple[int, int]]] = {}
  for task in tasks:
    matrix, task_slots = covariate_matrix(
        task, spec.lags, spec.covariates, task.horizon_targets if teacher_forced else None
      )
    matrices.append(matrix)
    slots = task_slots
  covariates = np.stack(matrices)
  scales = np.array([task.scale for task in tasks], dtype=np.float64)
  active: Optional[FloatArray] = None
  if not spec.covariates.warmup_over_padding:
    active = np.stack([task.context_mask for task in tasks])

  reps, state = represent(tape, weights, backbone, covariates[:, :context_len, :], mode, rng, active)

  local: Optional[Value] = None
  head: Value
  if adaptation == 'global_head':
    head = weights['w_global']
  else:
    if adaptation == 'meta':
      gamma: Value = softplus(weights['gamma_raw'])
    else:
      gamma = tape.constant(spec.ada_gamma if gamma_fixed is None else gamma_fixed)
    anchor_value = weights['w_global'] if adaptation == 'ada' and anchor else None
    context = stack(reps, axis=1)
    per_task: List[Value] = []
    for b, task in enumerate(tasks):
      h_b = getitem(context, (b, slice(task.pad_count, context_len)))
      z_b = task.context_window[task.pad_count:] / task.scale
      per_task.append(fit_local(h_b, z_b, gamma, anchor_value))
    local = stack(per_task)
    if detach_local:
      local = tape.stop_gradient(local)
    head = local

  outputs: List[Value] = []
  for k in range(1, horizon + 1):
    position = context_len + k
    base = tape.constant(covariates[:, position - 1, :])
    fills = slots.get(position, None)
    if fills is None:
      x = base
    else:
      x = place_columns(base, dict((column, outputs[step - 1]) for column, step in fills))
    h, state = backbone.step(x, state, weights, mode, rng, None)
    reps.append(h)
    outputs.append(relu(reduce_sum(h * head, axis=1)))
  scaled = stack(outputs, axis=1)
  return Rollout(scaled * scales[:, None], scaled, reps, local)

def _eval_rollout(
      task: ForecastTask,
      params: GlobalParams,
      strategy: str,
      adaptation: str,
      mode: str='eval',
      rng: Optional[np.random.Generator]=None,
      gamma_fixed: Optional[float]=None,
      anchor: bool=False
    ) -> FloatArray:
  tape = Tape(grad_enabled=False)
  weights = params.bind(tape, trainable=False)
  result = rollout(tape, weights, params.spec, [task], mode, strategy, adaptation, rng, gamma_fixed, anchor)
  return result.forecasts.data[0].copy()

def task_representation(
      task: ForecastTask,
      params: GlobalParams,
      horizon_values: Optional[FloatArray]=None,
      mode: str='eval',
      rng: Optional[np.random.Generator]=None
    ) -> FloatArray:
  """The ((context_len + horizon) x d) representation matrix of one task.

  Horizon lag slots are filled from horizon_values (descaled), or left at zero
  when it is None; padding rows are included.
  """
  tape = Tape(grad_enabled=False)
  weights = params.bind(tape, trainable=False)
  matrix, _ = covariate_matrix(task, params.spec.lags, params.spec.covariates, horizon_values)
  active = None if params.spec.covariates.warmup_over_padding else np.concatenate(
      [task.context_mask, np.ones(task.horizon)]
    )[None, :]
  reps, _ = represent(tape, weights, params.spec.make_backbone(), matrix[None, :, :], mode, rng, active)
  return np.stack([h.data[0] for h in reps])

def forecast(
      task: ForecastTask,
      params: GlobalParams,
      mode: str='eval',
      strategy: str='iterated',
      rng: Optional[np.random.Generator]=None
    ) -> FloatArray:
  """Forecast the horizon of one task through the per-series ridge layer.

  Returns:
      FloatArray: (horizon,) descaled forecasts, clamped at 0.
  """
  return _eval_rollout(task, params, strategy, 'meta', mode, rng)

def forecast_global_head(
      task: ForecastTask,
      params: GlobalParams,
      strategy: str='iterated',
      mode: str='eval',
      rng: Optional[np.random.Generator]=None
    ) -> FloatArray:
  """Forecast with the globally trained output weights w_global instead of a local fit

  Raises:
      ConfigError: The model has no global head.
  """
  if not 'w_global' in params.tensors:
    raise ConfigError("Model has no global output weights")
  return _eval_rollout(task, params, strategy, 'global_head', mode, rng)

def adapt_at_prediction_only(
      task: ForecastTask,
      params: GlobalParams,
      gamma_fixed: float=1.0,
      anchor: bool=False
    ) -> FloatArray:
  """Replace the global head of a conventionally trained model by ridge regression at prediction time.

  Args:
      task (ForecastTask): The task.
      params (GlobalParams): A global-head model.
      gamma_fixed (float, optional): Ridge regularizer. Defaults to 1.0.
      anchor (bool, optional): Shrink towards w_global rather than zero, which
                        matches fine-tuning the last layer from w_global. Defaults to False.

  Raises:
      ConfigError: anchor is requested but the model has no global head, or gamma_fixed <= 0.

  Returns:
      FloatArray: (horizon,) descaled forecasts, clamped at 0.
  """
  if not gamma_fixed > 0.0:
    raise ConfigError(f"gamma_fixed must be > 0, got {gamma_fixed}")
  if anchor and not 'w_global' in params.tensors:
    raise ConfigError("Anchored adaptation needs a model with global output weights")
  return _eval_rollout(task, params, 'iterated', 'ada', gamma_fixed=gamma_fixed, anchor=anchor)

def predict(task: ForecastTask, params: GlobalParams, anchor: bool=False) -> FloatArray:
  """Eval-mode iterated forecast using the output layer the model was trained for"""
  adaptation = params.spec.adaptation
  if adaptation == 'meta':
    return forecast(task, params)
  if adaptation == 'global_head':
    return forecast_global_head(task, params)
  return adapt_at_prediction_only(task, params, params.spec.ada_gamma, anchor)

def forecast_series(
      series: TimeSeries,
      params: GlobalParams,
      horizon: int,
      holdout: bool=True,
      anchor: bool=False
    ) -> FloatArray:
  """Forecast one series on its own.

  Args:
      series (TimeSeries): The series.
      params (GlobalParams): The model.
      horizon (int): Number of steps; may differ from the training horizon.
      holdout (bool, optional): If True, forecast the last horizon observations from
                        the ones before them; otherwise forecast past the end. Defaults to True.
      anchor (bool, optional): Passed to the 'ada' output layer.

  Returns:
      FloatArray: (horizon,) forecasts.
  """
  context_len = params.spec.context_len
  task = holdout_task(series, context_len, horizon) if holdout else prediction_task(series, context_len, horizon)
  return predict(task, params, anchor)
