import math

import numpy as np
import pytest

from captrfuse.core import ops
from captrfuse.core.gradcheck import grad_check, relative_error
from captrfuse.core.tensor import Tape, Tensor, backward, get_default_dtype, no_grad, parameter, precision
from captrfuse.exceptions import ContractError, ParameterError, ShapeError, TokenIndexError


def test_matmul_examples(f64):
    x = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((Tensor(np.eye(2)) @ x).data, x.data)
    np.testing.assert_array_equal((x @ Tensor([[1.0], [1.0]])).data, [[3.0], [7.0]])
    np.testing.assert_array_equal((Tensor(np.zeros((2, 2))) @ x).data, np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        ops.matmul(x, Tensor(np.ones((3, 1))))


def test_item_needs_a_single_element(f64):
    assert Tensor([[2.5]]).item() == 2.5
    assert isinstance(Tensor(1.0).item(), float)
    with pytest.raises(ShapeError):
        Tensor(np.ones(3)).item()


def test_softmax_examples(f64):
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, math.log(3.0)])).data, [0.25, 0.75])
    out = ops.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)


def test_softmax_rows_sum_to_one(f64):
    rng = np.random.default_rng(0)
    out = ops.softmax(Tensor(rng.normal(scale=30, size=(7, 5))), axis=1).data
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)


def test_layer_norm_examples(f64):
    one, zero = Tensor(np.ones(3)), Tensor(np.zeros(3))
    np.testing.assert_array_equal(ops.layer_norm(Tensor([5.0, 5.0, 5.0]), one, zero).data, [0.0, 0.0, 0.0])
    out = ops.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12).data
    np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-9)
    out = ops.layer_norm(Tensor([1.0, 3.0]), Tensor([2.0, 2.0]), Tensor([1.0, 1.0]), eps=1e-12).data
    np.testing.assert_allclose(out, [-1.0, 3.0], atol=1e-9)
    with pytest.raises(ParameterError):
        ops.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)


def test_layer_norm_along_columns(f64):
    x = Tensor(np.arange(6.0).reshape(3, 2))
    out = ops.layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), axis=0).data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)


def test_relu_and_subgradient(f64):
    x = parameter([-1.0, 0.0, 2.0])
    y = ops.relu(x)
    np.testing.assert_array_equal(y.data, [0.0, 0.0, 2.0])
    ops.sum(y).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_dropout(f64):
    x = Tensor(np.ones(100_000))
    assert ops.dropout(x, 0.0, True, np.random.default_rng(0)) is x
    assert ops.dropout(x, 0.5, False) is x
    draws = ops.dropout(x, 0.1, True, np.random.default_rng(0)).data
    assert abs(draws.mean() - 1.0) < 0.01
    with pytest.raises(ParameterError):
        ops.dropout(x, 1.0, True, np.random.default_rng(0))
    with pytest.raises(ContractError):
        ops.dropout(x, 0.1, True)


def test_masked_cross_entropy_closed_forms(f64):
    logits = Tensor(np.zeros((3, 4)))
    assert ops.masked_cross_entropy(logits, [1, 2, 3], [False, False, False]).item() == 0.0
    value = ops.masked_cross_entropy(logits, [1, 2, 3], [True, False, True]).item()
    assert value == pytest.approx(2 * math.log(4), abs=1e-12)
    with pytest.raises(TokenIndexError):
        ops.masked_cross_entropy(logits, [1, 2, 4], [True, True, True])


def test_masked_cross_entropy_decreases_with_margin(f64):
    values = []
    for margin in (0.0, 1.0, 2.0, 4.0):
        logits = np.zeros((1, 3))
        logits[0, 2] = margin
        values.append(ops.masked_cross_entropy(Tensor(logits), [2], [True]).item())
    assert values == sorted(values, reverse=True)


def test_backward_examples(f64):
    x = parameter([1.0, 2.0, 3.0])
    ops.sum(x).backward()
    np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    x = parameter(3.0)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)

    y = parameter(1.5)
    (y + y).backward()
    assert y.grad == pytest.approx(2.0)


def test_backward_accumulates_and_broadcasts(f64):
    b = parameter([1.0, 2.0])
    x = Tensor(np.ones((3, 2)))
    ops.sum(x + b).backward()
    ops.sum(x + b).backward()
    np.testing.assert_array_equal(b.grad, [6.0, 6.0])


def test_backward_contracts(f64):
    with pytest.raises(ContractError):
        backward(parameter([1.0, 2.0]) * 2.0)
    with pytest.raises(ContractError):
        backward(ops.sum(Tensor([1.0, 2.0])))


def test_no_grad_records_nothing(f64):
    x = parameter([1.0, 2.0])
    with no_grad():
        y = ops.sum(x * x)
    assert not y.requires_grad


def test_tape_handles_deep_graphs(f64):
    x = parameter(1.0)
    y = x
    for _ in range(5000):
        y = y + 0.0
    tape = Tape.from_root(y)
    assert len(tape) == 5001
    y.backward()
    assert x.grad == pytest.approx(1.0)


def test_precision_is_scoped():
    before = get_default_dtype()
    with precision("f64"):
        assert Tensor([1.0]).dtype == np.float64
    assert get_default_dtype() == before
    with pytest.raises(ParameterError):
        with precision("float16"):
            pass


def test_conv2d_shape_and_values(f64):
    x = Tensor(np.ones((1, 4, 4)))
    w = Tensor(np.ones((2, 1, 3, 3)))
    out = ops.conv2d(x, w, stride=2, padding=1)
    assert out.shape == (2, 2, 2)
    # Top-left window sees a 2×2 corner of ones.
    assert out.data[0, 0, 0] == 4.0
    with pytest.raises(ShapeError):
        ops.conv2d(x, Tensor(np.ones((2, 3, 3, 3))))


def test_embedding_scatter(f64):
    table = parameter(np.arange(8.0).reshape(4, 2))
    rows = ops.embedding(table, [1, 1, 3])
    np.testing.assert_array_equal(rows.data, [[2, 3], [2, 3], [6, 7]])
    ops.sum(rows).backward()
    np.testing.assert_array_equal(table.grad[:, 0], [0, 2, 0, 1])
    with pytest.raises(TokenIndexError):
        ops.embedding(table, [4])


def test_grad_check_squared_norm(f64):
    rng = np.random.default_rng(0)
    W = parameter(rng.normal(size=(3, 4)))
    x = parameter(rng.normal(size=4))

    def f():
        y = W @ x
        return ops.sum(y * y)

    report = grad_check(f, [W, x], eps=1e-4, tol=1e-4)
    assert report.passed
    assert report.checked == 16
    assert report.max_error < 1e-6


def test_grad_check_flags_corrupted_gradient(f64):
    rng = np.random.default_rng(1)
    W = parameter(rng.normal(size=(3, 4)))
    x = Tensor(rng.normal(size=4))

    def f():
        y = W @ x
        return ops.sum(y * y)

    f().backward()
    report = grad_check(f, [W], analytic=[W.grad * 2.0])
    assert not report.passed
    assert len(report.failing_indices) == 12

    report = grad_check(f, [W], analytic=[W.grad * 2.0], retries=2)
    assert len(report.failing_indices) == 12
    assert report.retried == report.failing_indices


def test_grad_check_sampling(f64):
    W = parameter(np.random.default_rng(2).normal(size=(10, 10)))
    report = grad_check(lambda: ops.sum(ops.tanh(W)), [W], max_entries=7)
    assert report.checked == 7
    assert report.passed


def test_relative_error_floor():
    assert relative_error(1e-9, 2e-9) < 1e-5
    assert relative_error(1.0, 2.0) == pytest.approx(0.5)
