#
# Copyright (c) 2022 Samuel J. McKelvie
#
# MIT License - See LICENSE file accompanying this package.
#

"""
Minimal define-by-run reverse-mode automatic differentiation over dense
double-precision tensors.

A Tape records every operation applied to its Values in creation order, so the
node list is already topologically sorted: backward() is a single reverse sweep
over it. Tensors are plain numpy float64 arrays and are never mutated after a
Value is created, so they can be shared read-only between tapes.

The op set is just what the forecasting pipeline needs: elementwise arithmetic
and activations, matrix products, a handful of structural ops for stacking and
slicing, and a Cholesky-based solve of symmetric positive definite systems that
lets gradients flow through a closed-form ridge regression.

Example:

    tape = Tape()
    w = tape.variable([[1.0], [1.0]])
    h = tape.constant([[1.0], [1.0]])
    loss = square(matmul(transpose(w), h))
    tape.backward(loss)
    tape.grad(w)     # -> [[4.], [4.]]
"""

from typing import (
    Optional, List, Dict, Tuple, Callable, Sequence, Mapping, Union, Any, cast
  )

import re
import logging

import numpy as np
import scipy.linalg
import scipy.special

from .typehints import FloatArray
from .exceptions import NumericError, ShapeError

logger = logging.getLogger(__name__)

TensorConvertible = Union[float, int, Sequence[Any], FloatArray]
"""Type hint for values that can be turned into a tensor"""

BackwardFn = Callable[[FloatArray], Sequence[Optional[FloatArray]]]
"""Maps the adjoint of a node to the adjoint contributions for each of its parents"""

SYMMETRY_TOLERANCE: float = 1e-10
"""Relative asymmetry tolerated by solve_spd before it refuses the matrix"""

def as_tensor(data: TensorConvertible) -> FloatArray:
  """Convert data to a finite float64 array.

  Args:
      data (TensorConvertible): A scalar, nested sequence or array.

  Raises:
      NumericError: The data contains NaN or infinite entries.

  Returns:
      FloatArray: A new (or the same, if already float64) array.
  """
  result = np.asarray(data, dtype=np.float64)
  if not np.all(np.isfinite(result)):
    raise NumericError(f"Tensor contains non-finite entries: {result}")
  return result

class Value:
  """A node on a Tape: an immutable tensor plus the rule that propagates its adjoint to its parents"""

  id: int
  """Position of this node on its tape. Parents always have smaller ids."""

  data: FloatArray
  """The forward value"""

  op: str
  """Name of the op that produced this node ('leaf' for constants and variables)"""

  parents: Tuple['Value', ...]
  """The Values this node was computed from. Empty for leaves and for nodes that do not require grad."""

  requires_grad: bool
  """True if an adjoint should be propagated into this node"""

  tape: 'Tape'

  _backward: Optional[BackwardFn]

  # numpy defers to the reflected operators below instead of building object arrays
  __array_ufunc__ = None

  def __init__(
        self,
        tape: 'Tape',
        node_id: int,
        data: FloatArray,
        op: str,
        parents: Tuple['Value', ...],
        requires_grad: bool,
        backward_fn: Optional[BackwardFn]
      ):
    self.tape = tape
    self.id = node_id
    self.data = data
    self.op = op
    self.parents = parents
    self.requires_grad = requires_grad
    self._backward = backward_fn

  @property
  def shape(self) -> Tuple[int, ...]:
    return cast(Tuple[int, ...], self.data.shape)

  @property
  def T(self) -> 'Value':
    return transpose(self)

  def item(self) -> float:
    if self.data.size != 1:
      raise ShapeError(f"item() requires a single-element value, got shape {self.shape}")
    return float(self.data.reshape(-1)[0])

  def __repr__(self) -> str:
    return f"Value(id={self.id}, op={self.op}, shape={self.shape})"

  def __add__(self, other: 'Operand') -> 'Value':
    return add(self, other)

  def __radd__(self, other: 'Operand') -> 'Value':
    return add(other, self)

  def __sub__(self, other: 'Operand') -> 'Value':
    return sub(self, other)

  def __rsub__(self, other: 'Operand') -> 'Value':
    return sub(other, self)

  def __mul__(self, other: 'Operand') -> 'Value':
    return mul(self, other)

  def __rmul__(self, other: 'Operand') -> 'Value':
    return mul(other, self)

  def __truediv__(self, other: 'Operand') -> 'Value':
    return div(self, other)

  def __rtruediv__(self, other: 'Operand') -> 'Value':
    return div(other, self)

  def __neg__(self) -> 'Value':
    return neg(self)

  def __matmul__(self, other: 'Operand') -> 'Value':
    return matmul(self, other)

  def __getitem__(self, key: Any) -> 'Value':
    return getitem(self, key)

Operand = Union[Value, TensorConvertible]
"""Type hint for op arguments: a Value, or a constant that will be placed on the tape"""

class Tape:
  """
  Append-only record of the Values produced during one forward pass, plus the
  adjoints filled in by backward(). A tape is meant to be built for a single
  minibatch and then discarded.
  """

  nodes: List[Value]
  """All nodes in creation (and therefore topological) order"""

  adjoints: Dict[int, FloatArray]
  """Node id -> adjoint, populated by backward()"""

  grad_enabled: bool
  """If False, no backward rules are recorded; used for evaluation-only passes"""

  def __init__(self, grad_enabled: bool=True):
    self.nodes = []
    self.adjoints = {}
    self.grad_enabled = grad_enabled

  def _append(
        self,
        data: FloatArray,
        op: str,
        parents: Tuple[Value, ...],
        requires_grad: bool,
        backward_fn: Optional[BackwardFn]
      ) -> Value:
    node = Value(self, len(self.nodes), data, op, parents, requires_grad, backward_fn)
    self.nodes.append(node)
    return node

  def constant(self, data: TensorConvertible) -> Value:
    """Place a tensor on the tape that never receives an adjoint"""
    return self._append(as_tensor(data), 'leaf', (), False, None)

  def variable(self, data: TensorConvertible) -> Value:
    """Place a tensor on the tape whose adjoint will be computed by backward()"""
    return self._append(as_tensor(data), 'leaf', (), self.grad_enabled, None)

  def lift(self, x: Operand) -> Value:
    """Return x if it is already a Value on this tape, else wrap it as a constant"""
    if isinstance(x, Value):
      if not x.tape is self:
        raise NumericError(f"Value {x.id} belongs to a different tape")
      return x
    return self.constant(x)

  def record(
        self,
        data: FloatArray,
        op: str,
        parents: Sequence[Value],
        backward_fn: BackwardFn
      ) -> Value:
    """Append the result of an op.

    Args:
        data (FloatArray): The forward result.
        op (str): Op name, used in error messages.
        parents (Sequence[Value]): The op's operands, in the order backward_fn
                        returns their adjoint contributions.
        backward_fn (BackwardFn): Adjoint rule.

    Raises:
        NumericError: The forward result is not finite.

    Returns:
        Value: The new node.
    """
    if not np.all(np.isfinite(data)):
      raise NumericError(f"Non-finite output from op '{op}' at node {len(self.nodes)}")
    requires_grad = self.grad_enabled and any(p.requires_grad for p in parents)
    if requires_grad:
      return self._append(data, op, tuple(parents), True, backward_fn)
    return self._append(data, op, (), False, None)

  def stop_gradient(self, x: Value) -> Value:
    """A constant copy of x: the value flows forward, no adjoint flows back"""
    return self._append(x.data, 'stop_gradient', (), False, None)

  def backward(self, loss: Value) -> Dict[int, FloatArray]:
    """Propagate adjoints from a scalar loss to every node that requires grad.

    Args:
        loss (Value): A single-element node on this tape.

    Raises:
        ShapeError: loss has more than one element.
        NumericError: A NaN or infinite adjoint was produced.

    Returns:
        Dict[int, FloatArray]: The adjoint map (also stored in self.adjoints).
    """
    if not loss.tape is self:
      raise NumericError(f"Loss node {loss.id} belongs to a different tape")
    if loss.data.size != 1:
      raise ShapeError(f"backward() requires a scalar loss, got shape {loss.shape}")
    adjoints: Dict[int, FloatArray] = {}
    if loss.requires_grad:
      adjoints[loss.id] = np.ones_like(loss.data)
    for node_id in range(loss.id, -1, -1):
      node = self.nodes[node_id]
      adjoint = adjoints.get(node_id, None)
      if adjoint is None or node._backward is None:
        continue
      contributions = node._backward(adjoint)
      for parent, contribution in zip(node.parents, contributions):
        if contribution is None or not parent.requires_grad:
          continue
        if not np.all(np.isfinite(contribution)):
          raise NumericError(f"Non-finite adjoint flowing from node {node_id} ('{node.op}') into node {parent.id}")
        existing = adjoints.get(parent.id, None)
        if existing is None:
          adjoints[parent.id] = np.array(contribution, dtype=np.float64).reshape(parent.shape)
        else:
          adjoints[parent.id] = existing + contribution
    self.adjoints = adjoints
    return adjoints

  def grad(self, x: Value) -> FloatArray:
    """The adjoint of x after backward(), or zeros if the loss does not depend on it"""
    adjoint = self.adjoints.get(x.id, None)
    return np.zeros_like(x.data) if adjoint is None else adjoint

def _unbroadcast(grad: FloatArray, shape: Tuple[int, ...]) -> FloatArray:
  """Sum grad down to shape, undoing numpy broadcasting"""
  if grad.shape == shape:
    return grad
  extra = grad.ndim - len(shape)
  if extra > 0:
    grad = grad.sum(axis=tuple(range(extra)))
  axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
  if len(axes) > 0:
    grad = grad.sum(axis=axes, keepdims=True)
  return grad.reshape(shape)

def _pair(a: Operand, b: Operand) -> Tuple[Value, Value]:
  if isinstance(a, Value):
    return a, a.tape.lift(b)
  if isinstance(b, Value):
    return b.tape.lift(a), b
  raise NumericError("At least one operand must be a Value")

def _broadcast_shape(op: str, a: Value, b: Value) -> None:
  try:
    np.broadcast_shapes(a.shape, b.shape)
  except ValueError:
    raise ShapeError(f"Shape mismatch in '{op}': {a.shape} vs {b.shape}")

def add(a: Operand, b: Operand) -> Value:
  va, vb = _pair(a, b)
  _broadcast_shape('add', va, vb)
  sa, sb = va.shape, vb.shape
  return va.tape.record(
      va.data + vb.data, 'add', (va, vb),
      lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )

def sub(a: Operand, b: Operand) -> Value:
  va, vb = _pair(a, b)
  _broadcast_shape('sub', va, vb)
  sa, sb = va.shape, vb.shape
  return va.tape.record(
      va.data - vb.data, 'sub', (va, vb),
      lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )

def mul(a: Operand, b: Operand) -> Value:
  va, vb = _pair(a, b)
  _broadcast_shape('mul', va, vb)
  da, db = va.data, vb.data
  return va.tape.record(
      da * db, 'mul', (va, vb),
      lambda g: (_unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape))
    )

def div(a: Operand, b: Operand) -> Value:
  va, vb = _pair(a, b)
  _broadcast_shape('div', va, vb)
  da, db = va.data, vb.data
  if np.any(db == 0.0):
    raise NumericError(f"Division by exact zero at node {len(va.tape.nodes)}")
  result = da / db
  return va.tape.record(
      result, 'div', (va, vb),
      lambda g: (_unbroadcast(g / db, da.shape), _unbroadcast(-g * result / db, db.shape))
    )

def scale(a: Value, factor: float) -> Value:
  """Multiply by a plain constant without placing it on the tape"""
  c = float(factor)
  return a.tape.record(a.data * c, 'scale', (a,), lambda g: (g * c,))

def _safe_log(x: FloatArray) -> FloatArray:
  with np.errstate(divide='ignore', invalid='ignore'):
    return cast(FloatArray, np.log(x))

UnaryRule = Tuple[Callable[[FloatArray], FloatArray], Callable[[FloatArray, FloatArray], FloatArray]]

_UNARY: Dict[str, UnaryRule] = {
    'neg':      (np.negative,                        lambda x, y: -np.ones_like(x)),
    'abs':      (np.abs,                             lambda x, y: np.sign(x)),   # subgradient 0 at 0
    'tanh':     (np.tanh,                            lambda x, y: 1.0 - y * y),
    'sigmoid':  (scipy.special.expit,                lambda x, y: y * (1.0 - y)),
    'relu':     (lambda x: np.maximum(x, 0.0),       lambda x, y: (x > 0.0).astype(np.float64)),
    'log':      (_safe_log,                          lambda x, y: 1.0 / x),
    'softplus': (lambda x: np.logaddexp(0.0, x),     lambda x, y: scipy.special.expit(x)),
    'square':   (np.square,                          lambda x, y: 2.0 * x),
  }
"""Forward function and local derivative (as a function of input x and output y) for each unary op"""

def unary(op_kind: str, a: Value) -> Value:
  """Apply a registered elementwise unary op.

  Args:
      op_kind (str): One of the keys of _UNARY.
      a (Value): The operand.

  Raises:
      NumericError: Unknown op, or the result is not finite (e.g., log of a non-positive entry).

  Returns:
      Value: The elementwise result.
  """
  rule = _UNARY.get(op_kind, None)
  if rule is None:
    raise NumericError(f"Unknown elementwise op: {op_kind}")
  forward, derivative = rule
  x = a.data
  y = forward(x)
  return a.tape.record(y, op_kind, (a,), lambda g: (g * derivative(x, y),))

def neg(a: Value) -> Value:
  return unary('neg', a)

def absolute(a: Value) -> Value:
  return unary('abs', a)

def tanh(a: Value) -> Value:
  return unary('tanh', a)

def sigmoid(a: Value) -> Value:
  return unary('sigmoid', a)

def relu(a: Value) -> Value:
  return unary('relu', a)

def log(a: Value) -> Value:
  return unary('log', a)

def softplus(a: Value) -> Value:
  return unary('softplus', a)

def square(a: Value) -> Value:
  return unary('square', a)

def elementwise(op_kind: str, a: Value, b: Optional[Operand]=None) -> Value:
  """Dispatch an elementwise op by name.

  Binary kinds are add, sub, mul and div; 'scale' takes a plain constant as b;
  everything else is unary.
  """
  binary: Dict[str, Callable[[Operand, Operand], Value]] = dict(add=add, sub=sub, mul=mul, div=div)
  if op_kind in binary:
    if b is None:
      raise NumericError(f"Elementwise op '{op_kind}' needs two operands")
    return binary[op_kind](a, b)
  if op_kind == 'scale':
    if b is None or isinstance(b, Value):
      raise NumericError("Elementwise op 'scale' needs a plain constant factor")
    return scale(a, float(cast(float, b)))
  return unary(op_kind, a)

def matmul(a: Operand, b: Operand) -> Value:
  """Matrix product of two 2-D Values; adjoints are g·bᵀ and aᵀ·g"""
  va, vb = _pair(a, b)
  da, db = va.data, vb.data
  if da.ndim != 2 or db.ndim != 2 or da.shape[1] != db.shape[0]:
    raise ShapeError(f"matmul dimension mismatch: {da.shape} @ {db.shape}")
  return va.tape.record(
      da @ db, 'matmul', (va, vb),
      lambda g: (g @ db.T, da.T @ g)
    )

def transpose(a: Value) -> Value:
  if a.data.ndim != 2:
    raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
  return a.tape.record(a.data.T, 'transpose', (a,), lambda g: (g.T,))

def reshape(a: Value, shape: Tuple[int, ...]) -> Value:
  original = a.shape
  try:
    result = a.data.reshape(shape)
  except ValueError:
    raise ShapeError(f"Cannot reshape {original} to {shape}")
  return a.tape.record(result, 'reshape', (a,), lambda g: (g.reshape(original),))

def reduce_sum(a: Value, axis: Optional[int]=None) -> Value:
  """Sum of all entries (axis=None) or along one axis (the axis is dropped)"""
  original = a.shape
  result = np.asarray(a.data.sum(axis=axis), dtype=np.float64)
  def backward_fn(g: FloatArray) -> Sequence[Optional[FloatArray]]:
    if axis is None:
      return (np.broadcast_to(g, original).copy(),)
    return (np.broadcast_to(np.expand_dims(g, axis), original).copy(),)
  return a.tape.record(result, 'sum', (a,), backward_fn)

def mean(a: Value) -> Value:
  return scale(reduce_sum(a), 1.0 / a.data.size)

def getitem(a: Value, key: Any) -> Value:
  """Basic (slice/integer) indexing; the adjoint is scattered back into a zero tensor"""
  original = a.shape
  result = np.array(a.data[key], dtype=np.float64)
  def backward_fn(g: FloatArray) -> Sequence[Optional[FloatArray]]:
    full = np.zeros(original, dtype=np.float64)
    full[key] += g
    return (full,)
  return a.tape.record(result, 'getitem', (a,), backward_fn)

def stack(values: Sequence[Value], axis: int=0) -> Value:
  """Stack equally shaped Values along a new axis"""
  if len(values) == 0:
    raise ShapeError("stack of zero values")
  tape = values[0].tape
  shapes = set(v.shape for v in values)
  if len(shapes) != 1:
    raise ShapeError(f"stack requires equal shapes, got {sorted(shapes)}")
  result = np.stack([v.data for v in values], axis=axis)
  count = len(values)
  def backward_fn(g: FloatArray) -> Sequence[Optional[FloatArray]]:
    return [np.take(g, i, axis=axis) for i in range(count)]
  return tape.record(result, 'stack', tuple(values), backward_fn)

def place_columns(base: Value, columns: Mapping[int, Value]) -> Value:
  """Overwrite columns of a (rows x cols) matrix with row-vector Values.

  Args:
      base (Value): The matrix providing every column not overwritten.
      columns (Mapping[int, Value]): Column index -> Value of shape (rows,).

  Returns:
      Value: The assembled matrix. The adjoint of each placed Value is its
             column of the incoming adjoint; base receives the rest.
  """
  if base.data.ndim != 2:
    raise ShapeError(f"place_columns expects a matrix base, got {base.shape}")
  rows = base.shape[0]
  result = base.data.copy()
  indices = sorted(columns.keys())
  for c in indices:
    col = columns[c]
    if col.shape != (rows,):
      raise ShapeError(f"place_columns column {c} has shape {col.shape}, expected {(rows,)}")
    result[:, c] = col.data
  def backward_fn(g: FloatArray) -> Sequence[Optional[FloatArray]]:
    g_base = g.copy()
    g_base[:, indices] = 0.0
    return [g_base] + [g[:, c].copy() for c in indices]
  return base.tape.record(result, 'place_columns', tuple([base] + [columns[c] for c in indices]), backward_fn)

def _failing_pivot(error: Exception) -> str:
  match = re.search(r'(\d+)', str(error))
  return match.group(1) if not match is None else '?'

def solve_spd(a: Value, b: Value) -> Value:
  """Solve A·x = b for symmetric positive definite A using a Cholesky factorization.

  The adjoints are b̄ = A⁻¹ḡ and Ā = −sym(b̄·xᵀ). Only the symmetric part of Ā is
  returned because A is always used as a symmetric matrix; off-symmetric
  components would be meaningless to callers that build A as HᵀH + γI.

  Args:
      a (Value): A (d x d) symmetric positive definite matrix.
      b (Value): A (d x k) right-hand side.

  Raises:
      ShapeError: Operand shapes are inconsistent.
      NumericError: A is not symmetric within SYMMETRY_TOLERANCE, or the Cholesky
                    factorization fails (the failing pivot is named).

  Returns:
      Value: x, of shape (d x k).
  """
  da, db = a.data, b.data
  if da.ndim != 2 or da.shape[0] != da.shape[1] or db.ndim != 2 or db.shape[0] != da.shape[0]:
    raise ShapeError(f"solve_spd dimension mismatch: A {da.shape}, b {db.shape}")
  magnitude = max(1.0, float(np.max(np.abs(da)))) if da.size > 0 else 1.0
  if da.size > 0 and float(np.max(np.abs(da - da.T))) > SYMMETRY_TOLERANCE * magnitude:
    raise NumericError(f"solve_spd matrix at node {a.id} is not symmetric")
  try:
    factor = scipy.linalg.cho_factor(da, lower=True, check_finite=False)
  except np.linalg.LinAlgError as e:
    raise NumericError(f"Cholesky factorization failed at pivot {_failing_pivot(e)} (matrix at node {a.id} is not positive definite)")
  x = scipy.linalg.cho_solve(factor, db, check_finite=False)
  def backward_fn(g: FloatArray) -> Sequence[Optional[FloatArray]]:
    g_b = scipy.linalg.cho_solve(factor, g, check_finite=False)
    outer = g_b @ x.T
    g_a = -0.5 * (outer + outer.T)
    return (g_a, g_b)
  return a.tape.record(x, 'solve_spd', (a, b), backward_fn)

def count_ops(tape: Tape, op: str) -> int:
  """Number of nodes on the tape produced by op"""
  return sum(1 for node in tape.nodes if node.op == op)

ScalarFunction = Callable[[Tape, Value], Value]
"""A differentiable scalar function of a parameter Value, built on the given tape"""

def _evaluate(f: ScalarFunction, theta: FloatArray) -> float:
  tape = Tape(grad_enabled=False)
  result = f(tape, tape.constant(theta))
  if result.data.size != 1:
    raise ShapeError(f"grad_check function must be scalar, got shape {result.shape}")
  value = float(result.data.reshape(-1)[0])
  if not np.isfinite(value):
    raise NumericError("grad_check function is not finite")
  return value

def autodiff_gradient(f: ScalarFunction, theta: TensorConvertible) -> FloatArray:
  """Gradient of f at theta computed by a backward pass"""
  tape = Tape()
  param = tape.variable(theta)
  tape.backward(f(tape, param))
  return tape.grad(param)

def finite_difference_gradient(f: ScalarFunction, theta: TensorConvertible, eps: float=1e-6) -> FloatArray:
  """Central-difference gradient of f at theta"""
  base = as_tensor(theta)
  result = np.zeros_like(base)
  for index in np.ndindex(*base.shape):
    plus = base.copy()
    plus[index] += eps
    minus = base.copy()
    minus[index] -= eps
    result[index] = (_evaluate(f, plus) - _evaluate(f, minus)) / (2.0 * eps)
  return result

def grad_check(f: ScalarFunction, theta: TensorConvertible, eps: float=1e-6) -> float:
  """Compare the autodiff gradient of f with central finite differences.

  Args:
      f (ScalarFunction): Builds a scalar loss from a parameter Value on a tape.
      theta (TensorConvertible): The point at which the gradient is checked.
      eps (float, optional): Finite-difference step. Defaults to 1e-6.

  Raises:
      NumericError: eps is not positive, or f is not finite near theta.

  Returns:
      float: max over coordinates of |autodiff − fd| / (|fd| + 1e-8); 0.0 for an empty theta.
  """
  if not eps > 0.0:
    raise NumericError(f"grad_check step must be positive, got {eps}")
  analytic = autodiff_gradient(f, theta)
  numeric = finite_difference_gradient(f, theta, eps)
  if numeric.size == 0:
    return 0.0
  errors = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)
  worst = float(np.max(errors))
  logger.debug(f"grad_check over {numeric.size} coordinates: max relative error {worst:.3e}")
  return worst
