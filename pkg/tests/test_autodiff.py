import math

import numpy as np
import pytest

from meta_forecast.exceptions import NumericError, ShapeError
from meta_forecast.autodiff import (
    Tape, add, mul, div, tanh, softplus, sigmoid, relu, log, square, absolute, matmul, transpose,
    reshape, reduce_sum, mean, getitem, stack, place_columns, solve_spd, elementwise, count_ops,
    autodiff_gradient, finite_difference_gradient, grad_check
  )


def test_add_is_componentwise():
  tape = Tape()
  assert np.array_equal(add(tape.constant([1.0, 2.0]), [3.0, 4.0]).data, [4.0, 6.0])

def test_tanh_at_zero_has_unit_gradient():
  tape = Tape()
  x = tape.variable(0.0)
  y = tanh(x)
  assert y.item() == 0.0
  tape.backward(y)
  assert tape.grad(x) == pytest.approx(1.0)

def test_softplus_at_zero():
  tape = Tape()
  assert softplus(tape.constant(0.0)).item() == pytest.approx(math.log(2.0), abs=1e-12)

def test_matmul_examples():
  tape = Tape()
  assert np.array_equal(matmul(tape.constant(np.eye(2)), [[1.0], [2.0]]).data, [[1.0], [2.0]])
  assert np.array_equal(matmul(tape.constant([[1.0, 2.0]]), [[3.0], [4.0]]).data, [[11.0]])

def test_matmul_rejects_mismatched_dimensions():
  tape = Tape()
  with pytest.raises(ShapeError):
    matmul(tape.constant(np.ones((2, 3))), np.ones((2, 3)))

def test_solve_spd_identity():
  tape = Tape()
  x = solve_spd(tape.constant(np.eye(3)), tape.constant([[1.0], [2.0], [3.0]]))
  assert np.allclose(x.data[:, 0], [1.0, 2.0, 3.0])

def test_solve_spd_two_by_two():
  tape = Tape()
  x = solve_spd(tape.constant([[3.0, 1.0], [1.0, 3.0]]), tape.constant([[4.0], [5.0]]))
  assert np.allclose(x.data[:, 0], [0.875, 1.375], atol=1e-12)

def test_solve_spd_reports_failing_pivot():
  tape = Tape()
  with pytest.raises(NumericError, match='pivot'):
    solve_spd(tape.constant([[1.0, 2.0], [2.0, 1.0]]), tape.constant([[1.0], [1.0]]))

def test_solve_spd_rejects_asymmetric_matrix():
  tape = Tape()
  with pytest.raises(NumericError):
    solve_spd(tape.constant([[2.0, 1.0], [0.0, 2.0]]), tape.constant([[1.0], [1.0]]))

def test_division_by_exact_zero_is_an_error():
  tape = Tape()
  with pytest.raises(NumericError):
    div(tape.constant([1.0, 2.0]), [1.0, 0.0])

def test_broadcast_mismatch_is_a_shape_error():
  tape = Tape()
  with pytest.raises(ShapeError):
    add(tape.constant(np.ones(3)), np.ones(4))

def test_non_finite_forward_value_is_an_error():
  tape = Tape()
  with pytest.raises(NumericError):
    log(tape.constant([1.0, 0.0]))

def test_non_finite_constant_is_rejected():
  tape = Tape()
  with pytest.raises(NumericError):
    tape.constant([1.0, float('nan')])

def test_sum_adjoint_is_ones():
  tape = Tape()
  w = tape.variable([1.0, 2.0, 3.0])
  tape.backward(reduce_sum(w))
  assert np.array_equal(tape.grad(w), [1.0, 1.0, 1.0])

def test_squared_inner_product_adjoint():
  tape = Tape()
  w = tape.variable([[1.0], [1.0]])
  h = tape.constant([[1.0, 1.0]])
  loss = square(matmul(h, w))
  tape.backward(loss)
  assert np.allclose(tape.grad(w), [[4.0], [4.0]])

def test_backward_requires_scalar_loss():
  tape = Tape()
  w = tape.variable([1.0, 2.0])
  with pytest.raises(ShapeError):
    tape.backward(w * 2.0)

def test_adjoints_accumulate_over_shared_nodes():
  tape = Tape()
  x = tape.variable(3.0)
  tape.backward(x * x + x)
  assert tape.grad(x) == pytest.approx(7.0)

def test_stop_gradient_blocks_adjoint():
  tape = Tape()
  x = tape.variable(2.0)
  y = tape.stop_gradient(x * x)
  tape.backward(y * x)
  assert tape.grad(x) == pytest.approx(4.0)

def test_grad_disabled_tape_records_no_parents():
  tape = Tape(grad_enabled=False)
  x = tape.variable([1.0, 2.0])
  y = mul(x, x)
  assert y.parents == ()
  assert not y.requires_grad

def test_values_from_other_tapes_are_rejected():
  first = Tape()
  second = Tape()
  with pytest.raises(NumericError):
    add(first.variable(1.0), second.variable(1.0))

def test_elementwise_dispatch():
  tape = Tape()
  x = tape.constant([-1.0, 2.0])
  assert np.array_equal(elementwise('relu', x).data, [0.0, 2.0])
  assert np.array_equal(elementwise('mul', x, 3.0).data, [-3.0, 6.0])
  assert np.array_equal(elementwise('scale', x, 0.5).data, [-0.5, 1.0])
  with pytest.raises(NumericError):
    elementwise('cosh', x)

def test_count_ops():
  tape = Tape()
  x = tape.variable(np.ones((2, 2)))
  matmul(x, x)
  matmul(x, x)
  assert count_ops(tape, 'matmul') == 2
  assert count_ops(tape, 'solve_spd') == 0

def test_grad_check_quadratic():
  def f(tape, theta):
    return reduce_sum(theta * theta)
  assert grad_check(f, [1.0, 2.0]) < 1e-7

def test_grad_check_constant_function():
  def f(tape, theta):
    return tape.constant(3.0)
  assert np.array_equal(autodiff_gradient(f, [1.0, 2.0]), [0.0, 0.0])
  assert grad_check(f, [1.0, 2.0]) == 0.0

def test_grad_check_rejects_non_positive_step():
  def f(tape, theta):
    return reduce_sum(theta)
  with pytest.raises(NumericError):
    grad_check(f, [1.0], eps=0.0)

def test_finite_difference_matches_known_gradient():
  def f(tape, theta):
    return reduce_sum(theta * theta * theta)
  fd = finite_difference_gradient(f, [1.0, -2.0])
  assert np.allclose(fd, [3.0, 12.0], atol=1e-6)

def test_unary_ops_gradients():
  theta = np.array([0.3, -0.7, 1.1])

  def f(tape, x):
    y = tanh(x) + sigmoid(x) * 2.0 + softplus(x) + square(x) + absolute(x)
    return reduce_sum(y * y) + reduce_sum(log(softplus(x)))

  assert grad_check(f, theta) < 1e-5

def test_structural_ops_gradients():
  rng = np.random.default_rng(3)
  theta = rng.normal(size=(3, 4))

  def f(tape, x):
    a = transpose(x)
    b = reshape(getitem(x, (slice(0, 2), slice(None))), (4, 2))
    c = stack([reduce_sum(x, axis=0), reduce_sum(x, axis=1)[0:1] * np.ones(4)], axis=1)
    d = matmul(a, getitem(x, (slice(None), slice(0, 2)))) + b + c
    placed = place_columns(d, {1: reduce_sum(x * x, axis=0)})
    return mean(placed * placed) + reduce_sum(relu(x + 0.05))

  assert grad_check(f, theta) < 1e-5

def test_solve_spd_gradient():
  rng = np.random.default_rng(7)
  theta = rng.normal(size=(3, 3))
  rhs = rng.normal(size=(3, 2))

  def f(tape, x):
    a = matmul(x, transpose(x)) + 2.0 * np.eye(3)
    solution = solve_spd(a, tape.constant(rhs))
    return reduce_sum(solution * solution)

  assert grad_check(f, theta) < 1e-5

def test_solve_spd_gradient_with_respect_to_rhs():
  a = np.array([[3.0, 1.0], [1.0, 3.0]])

  def f(tape, b):
    return reduce_sum(square(solve_spd(tape.constant(a), reshape(b, (2, 1)))))

  assert grad_check(f, [4.0, 5.0]) < 1e-6

def test_solve_spd_residual_on_random_matrices():
  rng = np.random.default_rng(21)
  for d in (1, 2, 5, 10, 20, 35, 50):
    for _ in range(5):
      m = rng.normal(size=(d, d))
      a = m @ m.T + d * np.eye(d)
      a = 0.5 * (a + a.T)
      b = rng.normal(scale=10.0, size=(d, 1))
      tape = Tape()
      x = solve_spd(tape.constant(a), tape.constant(b)).data
      assert np.max(np.abs(a @ x - b)) <= 1e-9 * (1.0 + np.max(np.abs(b)))

def random_graph(tape, x, seed, size=12):
  rng = np.random.default_rng(seed)
  nodes = [x, tanh(x), x * 0.5]
  for _ in range(size):
    a = nodes[int(rng.integers(0, len(nodes)))]
    b = nodes[int(rng.integers(0, len(nodes)))]
    kind = int(rng.integers(0, 4))
    if kind == 0:
      nodes.append(a + b)
    elif kind == 1:
      nodes.append(tanh(a * b))
    elif kind == 2:
      nodes.append(sigmoid(a - b))
    else:
      nodes.append(square(tanh(a)))
  weights = [rng.normal(size=x.shape) for _ in range(2)]
  picks = [int(rng.integers(3, len(nodes))) for _ in range(2)]
  return [reduce_sum(nodes[i] * w) for i, w in zip(picks, weights)]

def test_backward_is_linear_in_the_loss():
  theta = np.random.default_rng(22).normal(size=(3, 2))
  for seed in range(20):
    grads = []
    for which in (0, 1, None):
      tape = Tape()
      x = tape.variable(theta)
      first, second = random_graph(tape, x, seed)
      tape.backward(first + second if which is None else (first, second)[which])
      grads.append(tape.grad(x))
    assert np.allclose(grads[2], grads[0] + grads[1], rtol=1e-12, atol=1e-12)
