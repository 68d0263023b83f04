import math

import numpy as np
import pytest

from captrfuse.core.gradcheck import grad_check
from captrfuse.core.tensor import Tensor, no_grad
from captrfuse.exceptions import ParameterError, ShapeError
from captrfuse.nn.attention import (
    AttentionHead,
    DecoderLayer,
    EncoderLayer,
    MultiHeadAttention,
    attention_apply,
    attention_weights,
    decoder_layer_forward,
    encoder_layer_forward,
    multi_head,
    qkv_project,
    sinusoidal_positions,
    stack_forward,
)


def _identity_head(d: int) -> AttentionHead:
    head = AttentionHead(d, d, np.random.default_rng(0))
    head.weight.data = np.stack([np.eye(d)] * 3)
    return head


def test_qkv_identity_projection(f64):
    X = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    Q, K, V = qkv_project(X, X, None, None, _identity_head(4))
    for out in (Q, K, V):
        np.testing.assert_array_equal(out.data, X.data)


def test_positions_do_not_reach_values(f64):
    rng = np.random.default_rng(1)
    head = AttentionHead(8, 4, rng)
    X = Tensor(rng.normal(size=(8, 5)))
    P = sinusoidal_positions(8, 5)
    Q0, K0, V0 = qkv_project(X, X, None, None, head)
    Q1, K1, V1 = qkv_project(X, X, P, P, head)
    np.testing.assert_array_equal(V0.data, V1.data)
    assert not np.allclose(Q0.data, Q1.data)


def test_qkv_matches_direct_arithmetic(f64):
    rng = np.random.default_rng(2)
    head = AttentionHead(6, 3, rng)
    Xq, Xkv = rng.normal(size=(6, 2)), rng.normal(size=(6, 4))
    Pq, Pkv = sinusoidal_positions(6, 2), sinusoidal_positions(6, 4)
    Q, K, V = qkv_project(Tensor(Xq), Tensor(Xkv), Pq, Pkv, head)
    W = head.weight.data
    np.testing.assert_allclose(Q.data, W[0] @ (Xq + Pq.table), atol=1e-6)
    np.testing.assert_allclose(K.data, W[1] @ (Xkv + Pkv.table), atol=1e-6)
    np.testing.assert_allclose(V.data, W[2] @ Xkv, atol=1e-6)


def test_attention_weight_examples(f64):
    alpha = attention_weights(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))
    np.testing.assert_allclose(alpha.data, np.ones((3, 1)))
    alpha = attention_weights(Tensor([[1.0]]), Tensor([[0.0, math.log(3.0)]]))
    np.testing.assert_allclose(alpha.data, [[0.25, 0.75]])
    alpha = attention_weights(Tensor([[1.0], [0.0]]), Tensor([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]))
    np.testing.assert_allclose(alpha.data, [[1 / 3, 1 / 3, 1 / 3]])


def test_attention_rows_sum_to_one_over_seeds(f64):
    for seed in range(100):
        rng = np.random.default_rng(seed)
        Q = Tensor(rng.normal(scale=3, size=(4, 5)))
        K = Tensor(rng.normal(scale=3, size=(4, 7)))
        alpha = attention_weights(Q, K)
        np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-6)


def test_masked_keys_get_no_weight(f64):
    rng = np.random.default_rng(3)
    alpha = attention_weights(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(4, 5))), [1, 1, 0, 1, 0])
    assert np.all(alpha.data[:, [2, 4]] < 1e-12)
    np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-6)
    with pytest.raises(ShapeError):
        attention_weights(Tensor(np.ones((4, 3))), Tensor(np.ones((4, 5))), [1, 1])


def test_attention_apply_examples(f64):
    V = Tensor([[5.0, 7.0]])
    np.testing.assert_array_equal(attention_apply(Tensor([[1.0, 0.0]]), V).data, [[5.0]])
    np.testing.assert_array_equal(attention_apply(Tensor([[0.5, 0.5]]), Tensor([[2.0, 4.0]])).data, [[3.0]])
    rng = np.random.default_rng(4)
    alpha, values = rng.dirichlet(np.ones(4), size=3), rng.normal(size=(2, 4))
    expected = np.stack([sum(alpha[i, j] * values[:, j] for j in range(4)) for i in range(3)], axis=1)
    np.testing.assert_allclose(attention_apply(Tensor(alpha), Tensor(values)).data, expected, atol=1e-6)


def test_zero_values_leave_layer_norm_of_query(f64):
    rng = np.random.default_rng(5)
    attn = MultiHeadAttention(4, 2, 0.0, rng)
    for head in attn.heads:
        head.weight.data[2] = 0.0
    X = rng.normal(size=(4, 3))
    out = multi_head(Tensor(X), Tensor(X), attn).data
    expected = (X - X.mean(axis=0)) / np.sqrt(X.var(axis=0) + 1e-5)
    np.testing.assert_allclose(out, expected, atol=1e-9)


def test_key_value_permutation_invariance(f64):
    for seed in range(100):
        rng = np.random.default_rng(seed)
        layer = MultiHeadAttention(8, 2, 0.0, rng)
        Xq, Xkv = rng.normal(size=(8, 3)), rng.normal(size=(8, 5))
        Pq, Pkv = sinusoidal_positions(8, 3).table, sinusoidal_positions(8, 5).table
        perm = rng.permutation(5)
        with no_grad():
            a = layer(Tensor(Xq), Tensor(Xkv), Tensor(Pq), Tensor(Pkv)).data
            b = layer(Tensor(Xq), Tensor(Xkv[:, perm]), Tensor(Pq), Tensor(Pkv[:, perm])).data
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_heads_must_divide_width():
    with pytest.raises(ParameterError):
        MultiHeadAttention(6, 4, 0.0, np.random.default_rng(0))


def test_sinusoidal_positions():
    P = sinusoidal_positions(8, 64).table
    np.testing.assert_array_equal(P[:, 0], [0, 1, 0, 1, 0, 1, 0, 1])
    assert np.all(np.abs(P) <= 1.0)
    assert len({tuple(np.round(P[:, i], 12)) for i in range(64)}) == 64
    grid = sinusoidal_positions(8, (2, 3))
    assert grid.table.shape == (8, 6)
    # Raster order: columns 0..2 share row 0.
    np.testing.assert_array_equal(grid.table[:4, 0], grid.table[:4, 2])
    with pytest.raises(ParameterError):
        sinusoidal_positions(7, 4)
    with pytest.raises(ParameterError):
        sinusoidal_positions(6, (2, 2))


def test_encoder_layer_shapes_and_depth(f64):
    rng = np.random.default_rng(6)
    layers = [EncoderLayer(8, 2, 0.0, rng) for _ in range(2)]
    for n in (1, 4, 9):
        X = Tensor(rng.normal(size=(8, n)))
        assert encoder_layer_forward(X, sinusoidal_positions(8, n), layers[0]).shape == (8, n)
    X = Tensor(rng.normal(size=(8, 4)))
    one = stack_forward(X, layers[:1]).data
    two = stack_forward(X, layers).data
    assert not np.allclose(one, two)


def test_decoder_layer_shape_independent_of_memory(f64):
    rng = np.random.default_rng(7)
    layer = DecoderLayer(8, 2, 0.0, rng)
    X = Tensor(rng.normal(size=(8, 6)))
    for m in (1, 4, 12):
        out = decoder_layer_forward(X, Tensor(rng.normal(size=(8, m))), sinusoidal_positions(8, 6), None, layer)
        assert out.shape == (8, 6)


def test_layer_gradients(f64):
    rng = np.random.default_rng(8)
    encoder = EncoderLayer(8, 2, 0.0, rng)
    decoder = DecoderLayer(8, 2, 0.0, rng)
    X = Tensor(rng.normal(size=(8, 4)))
    memory = Tensor(rng.normal(size=(8, 3)))
    w = rng.normal(size=(8, 4))
    P = sinusoidal_positions(8, 4)

    for params, f in [
        (encoder.parameters(), lambda: (encoder(X, P, key_mask=[1, 1, 1, 0]) * w).sum()),
        (decoder.parameters(), lambda: (decoder(X, memory, P) * w).sum()),
    ]:
        report = grad_check(f, params, retries=2)
        assert report.passed, report.failures
        assert report.checked == sum(p.data.size for p in params)
