#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""
Representation networks. A backbone maps the covariates of one window position
(for a whole minibatch at once) and its recurrent state to the d-dimensional
representation h_t that the output layer consumes.
"""

from typing import Optional, List, Dict, Tuple, Mapping, cast

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .typehints import FloatArray
from .exceptions import ConfigError, ShapeError
from .autodiff import Tape, Value, matmul, sigmoid, tanh, relu, getitem

MODES: Tuple[str, ...] = ('train', 'eval')

Weights = Mapping[str, Value]
"""Parameter name -> Value on the current tape"""

@dataclass
class LSTMState:
  """Per-layer (hidden, cell) pairs; each is a (batch x hidden) Value"""

  layers: List[Tuple[Value, Value]]

def _check_mode(mode: str) -> None:
  if not mode in MODES:
    raise ConfigError(f"Unknown mode {mode!r}; expected one of {MODES}")

def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> FloatArray:
  bound = 1.0 / math.sqrt(fan_in)
  return rng.uniform(-bound, bound, size=shape)

def lstm_cell(
      x: Value,
      state: Tuple[Value, Value],
      w_x: Value,
      w_h: Value,
      bias: Value,
      mode: str,
      zoneout: float=0.1,
      rng: Optional[np.random.Generator]=None
    ) -> Tuple[Value, Tuple[Value, Value]]:
  """One LSTM step with zoneout.

  Gates are packed as [input, forget, output, candidate] along the columns of
  w_x, w_h and bias. In train mode each hidden and cell coordinate keeps its
  previous value with probability `zoneout`, independently; in eval mode the
  expectation zoneout*previous + (1 - zoneout)*new is used.

  Args:
      x (Value): (batch x input) covariates.
      state (Tuple[Value, Value]): (hidden, cell), each (batch x n).
      w_x (Value): (input x 4n) input weights.
      w_h (Value): (n x 4n) recurrent weights.
      bias (Value): (4n,) biases.
      mode (str): 'train' or 'eval'.
      zoneout (float, optional): Keep probability for previous state. Defaults to 0.1.
      rng (Optional[np.random.Generator], optional): Required in train mode when zoneout is in (0, 1).

  Raises:
      ShapeError: Dimensions are inconsistent.
      ConfigError: Unknown mode, or train mode without an rng.

  Returns:
      Tuple[Value, Tuple[Value, Value]]: The output (the new hidden state) and the new state.
  """
  _check_mode(mode)
  h_prev, c_prev = state
  n = h_prev.shape[1]
  if w_x.shape[1] != 4 * n or w_h.shape != (n, 4 * n) or bias.shape != (4 * n,) or x.shape[1] != w_x.shape[0]:
    raise ShapeError(f"LSTM dimension mismatch: x {x.shape}, w_x {w_x.shape}, w_h {w_h.shape}, bias {bias.shape}, hidden {n}")
  z = matmul(x, w_x) + matmul(h_prev, w_h) + bias
  i = sigmoid(getitem(z, (slice(None), slice(0, n))))
  f = sigmoid(getitem(z, (slice(None), slice(n, 2 * n))))
  o = sigmoid(getitem(z, (slice(None), slice(2 * n, 3 * n))))
  g = tanh(getitem(z, (slice(None), slice(3 * n, 4 * n))))
  c_new = f * c_prev + i * g
  h_new = o * tanh(c_new)
  if zoneout > 0.0:
    if mode == 'train' and zoneout < 1.0:
      if rng is None:
        raise ConfigError("Zoneout in train mode needs an rng")
      keep_c = (rng.random(c_new.shape) < zoneout).astype(np.float64)
      keep_h = (rng.random(h_new.shape) < zoneout).astype(np.float64)
      c_new = keep_c * c_prev + (1.0 - keep_c) * c_new
      h_new = keep_h * h_prev + (1.0 - keep_h) * h_new
    elif zoneout >= 1.0:
      c_new, h_new = c_prev, h_prev
    else:
      c_new = zoneout * c_prev + (1.0 - zoneout) * c_new
      h_new = zoneout * h_prev + (1.0 - zoneout) * h_new
  return h_new, (h_new, c_new)

class Backbone(ABC):
  """Abstract base class for representation networks"""

  kind: str
  input_dim: int
  rep_dim: int

  @abstractmethod
  def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
    """Names and shapes of every weight tensor"""
    ...

  @abstractmethod
  def init_parameters(self, rng: np.random.Generator) -> Dict[str, FloatArray]:
    """Freshly initialized weights"""
    ...

  def initial_state(self, tape: Tape, batch: int) -> Optional[LSTMState]:
    """The state before the first window position; None for stateless backbones"""
    return None

  @abstractmethod
  def step(
        self,
        x: Value,
        state: Optional[LSTMState],
        weights: Weights,
        mode: str,
        rng: Optional[np.random.Generator]=None,
        active: Optional[FloatArray]=None
      ) -> Tuple[Value, Optional[LSTMState]]:
    """Compute h_t for one window position.

    Args:
        x (Value): (batch x input_dim) covariates.
        state (Optional[LSTMState]): State after the previous position.
        weights (Weights): Parameter Values.
        mode (str): 'train' or 'eval'.
        rng (Optional[np.random.Generator], optional): For zoneout masks in train mode.
        active (Optional[FloatArray], optional): (batch x 1) 0/1 column; where 0,
                        the recurrent state is carried over unchanged.

    Returns:
        Tuple[Value, Optional[LSTMState]]: (batch x rep_dim) representation and the new state.
    """
    ...

class LinearBackbone(Backbone):
  """A single affine map from covariates to the representation"""

  def __init__(self, input_dim: int, rep_dim: int):
    self.kind = 'linear'
    self.input_dim = input_dim
    self.rep_dim = rep_dim

  def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
    return {'lin.w': (self.input_dim, self.rep_dim), 'lin.b': (self.rep_dim,)}

  def init_parameters(self, rng: np.random.Generator) -> Dict[str, FloatArray]:
    return {
        'lin.w': _uniform(rng, (self.input_dim, self.rep_dim), self.input_dim),
        'lin.b': _uniform(rng, (self.rep_dim,), self.input_dim),
      }

  def step(self, x, state, weights, mode, rng=None, active=None):    # type: ignore[no-untyped-def]
    return matmul(x, weights['lin.w']) + weights['lin.b'], None

class FeedForwardBackbone(Backbone):
  """Two dense layers of width rep_dim, each followed by ReLU"""

  def __init__(self, input_dim: int, rep_dim: int):
    self.kind = 'ff'
    self.input_dim = input_dim
    self.rep_dim = rep_dim

  def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
    d = self.rep_dim
    return {'ff1.w': (self.input_dim, d), 'ff1.b': (d,), 'ff2.w': (d, d), 'ff2.b': (d,)}

  def init_parameters(self, rng: np.random.Generator) -> Dict[str, FloatArray]:
    d = self.rep_dim
    return {
        'ff1.w': _uniform(rng, (self.input_dim, d), self.input_dim),
        'ff1.b': _uniform(rng, (d,), self.input_dim),
        'ff2.w': _uniform(rng, (d, d), d),
        'ff2.b': _uniform(rng, (d,), d),
      }

  def step(self, x, state, weights, mode, rng=None, active=None):    # type: ignore[no-untyped-def]
    hidden = relu(matmul(x, weights['ff1.w']) + weights['ff1.b'])
    return relu(matmul(hidden, weights['ff2.w']) + weights['ff2.b']), None

class RecurrentBackbone(Backbone):
  """
  Two stacked LSTM layers with zoneout on both, a residual connection around
  the second (its output plus its input), and a final linear projection from
  the hidden size to rep_dim, so the size of the ridge problem is chosen
  independently of the hidden size.
  """

  hidden_dim: int
  zoneout: float

  def __init__(self, input_dim: int, rep_dim: int, hidden_dim: int, zoneout: float=0.1):
    self.kind = 'rnn'
    self.input_dim = input_dim
    self.rep_dim = rep_dim
    self.hidden_dim = hidden_dim
    self.zoneout = zoneout

  def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
    n, p, d = self.hidden_dim, self.input_dim, self.rep_dim
    return {
        'lstm1.w_x': (p, 4 * n), 'lstm1.w_h': (n, 4 * n), 'lstm1.b': (4 * n,),
        'lstm2.w_x': (n, 4 * n), 'lstm2.w_h': (n, 4 * n), 'lstm2.b': (4 * n,),
        'proj.w': (n, d), 'proj.b': (d,),
      }

  def init_parameters(self, rng: np.random.Generator) -> Dict[str, FloatArray]:
    n, p, d = self.hidden_dim, self.input_dim, self.rep_dim
    result: Dict[str, FloatArray] = {}
    for layer, fan in (('lstm1', p), ('lstm2', n)):
      fan_in = fan + n
      result[f'{layer}.w_x'] = _uniform(rng, (fan, 4 * n), fan_in)
      result[f'{layer}.w_h'] = _uniform(rng, (n, 4 * n), fan_in)
      bias = _uniform(rng, (4 * n,), fan_in)
      bias[n:2 * n] = 1.0     # forget gate
      result[f'{layer}.b'] = bias
    result['proj.w'] = _uniform(rng, (n, d), n)
    result['proj.b'] = _uniform(rng, (d,), n)
    return result

  def initial_state(self, tape: Tape, batch: int) -> Optional[LSTMState]:
    zeros = np.zeros((batch, self.hidden_dim), dtype=np.float64)
    return LSTMState([(tape.constant(zeros), tape.constant(zeros)) for _ in range(2)])

  def step(self, x, state, weights, mode, rng=None, active=None):    # type: ignore[no-untyped-def]
    assert not state is None
    new_layers: List[Tuple[Value, Value]] = []
    layer_input = x
    out1, state1 = lstm_cell(
        layer_input, state.layers[0], weights['lstm1.w_x'], weights['lstm1.w_h'], weights['lstm1.b'],
        mode, self.zoneout, rng
      )
    out2, state2 = lstm_cell(
        out1, state.layers[1], weights['lstm2.w_x'], weights['lstm2.w_h'], weights['lstm2.b'],
        mode, self.zoneout, rng
      )
    for previous, updated in zip(state.layers, (state1, state2)):
      if active is None:
        new_layers.append(updated)
      else:
        hold = 1.0 - active
        new_layers.append((active * updated[0] + hold * previous[0], active * updated[1] + hold * previous[1]))
    residual = out2 + out1
    rep = matmul(residual, weights['proj.w']) + weights['proj.b']
    return rep, LSTMState(new_layers)

def make_backbone(kind: str, input_dim: int, rep_dim: int, hidden_dim: Optional[int]=None, zoneout: float=0.1) -> Backbone:
  """Construct a backbone by kind ('rnn', 'ff' or 'linear')"""
  if kind == 'rnn':
    return RecurrentBackbone(input_dim, rep_dim, rep_dim if hidden_dim is None else hidden_dim, zoneout)
  if kind == 'ff':
    return FeedForwardBackbone(input_dim, rep_dim)
  if kind == 'linear':
    return LinearBackbone(input_dim, rep_dim)
  raise ConfigError(f"Unknown backbone kind: {kind!r}")
