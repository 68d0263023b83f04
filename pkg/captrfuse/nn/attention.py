"""
Key/query/value attention in column layout.

Sequences are d×N matrices (one column per element). A head holds
T' = [T'_1; T'_2; T'_3] of shape 3×d'×d and computes

    Q = T'_1 (X_q + P_q),  K = T'_2 (X_kv + P_kv),  V = T'_3 X_kv

so values never see positional terms. Positions are re-added at every layer.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from captrfuse.core import ops
from captrfuse.core.tensor import Tensor
from captrfuse.exceptions import ParameterError, ShapeError
from captrfuse.nn.module import Module, ones, uniform, zeros

MASKED_SCORE = -1e9

PositionsLike = Union["PositionalEncoding", Tensor, None]


@dataclass(frozen=True)
class PositionalEncoding:
    """Fixed d×N sinusoidal table."""

    table: np.ndarray

    @property
    def d(self) -> int:
        return int(self.table.shape[0])

    @property
    def length(self) -> int:
        return int(self.table.shape[1])

    @property
    def tensor(self) -> Tensor:
        return Tensor(self.table)


@lru_cache(maxsize=64)
def _sinusoid(d: int, n: int) -> np.ndarray:
    positions = np.arange(n, dtype=np.float64)
    freqs = 1.0 / np.power(10000.0, np.arange(0, d, 2, dtype=np.float64) / d)
    angles = np.outer(freqs, positions)
    table = np.empty((d, n), dtype=np.float64)
    table[0::2] = np.sin(angles)
    table[1::2] = np.cos(angles)
    table.setflags(write=False)
    return table


def sinusoidal_positions(d: int, length: Union[int, Tuple[int, int]]) -> PositionalEncoding:
    """1-D table for token positions, or (h, w) for a raster-flattened image grid.

    The 2-D table stacks a d/2 row encoding over a d/2 column encoding.
    """
    if d <= 0 or d % 2:
        raise ParameterError(f"positional width must be even and positive, got {d}")
    if isinstance(length, tuple):
        h, w = length
        if d % 4:
            raise ParameterError(f"2-D positional width must be divisible by 4, got {d}")
        if h <= 0 or w <= 0:
            raise ParameterError(f"grid must be non-empty, got {length}")
        rows = np.repeat(_sinusoid(d // 2, h), w, axis=1)
        cols = np.tile(_sinusoid(d // 2, w), (1, h))
        return PositionalEncoding(np.vstack([rows, cols]))
    if length <= 0:
        raise ParameterError(f"sequence length must be positive, got {length}")
    return PositionalEncoding(_sinusoid(d, length))


def _positions(P: PositionsLike, x: Tensor) -> Optional[Tensor]:
    if P is None:
        return None
    tensor = P.tensor if isinstance(P, PositionalEncoding) else P
    if tensor.shape != x.shape:
        raise ShapeError(f"positional encoding {tensor.shape} does not match sequence {x.shape}")
    return tensor


class AttentionHead(Module):
    def __init__(self, d: int, d_head: int, rng: np.random.Generator):
        self.weight = uniform(rng, (3, d_head, d), fan_in=d)

    @property
    def d_head(self) -> int:
        return self.weight.shape[1]


def qkv_project(
    X_q: Tensor,
    X_kv: Tensor,
    P_q: PositionsLike,
    P_kv: PositionsLike,
    head: AttentionHead,
) -> Tuple[Tensor, Tensor, Tensor]:
    d = head.weight.shape[2]
    if X_q.ndim != 2 or X_kv.ndim != 2 or X_q.shape[0] != d or X_kv.shape[0] != d:
        raise ShapeError(f"qkv_project expects d={d} rows, got X_q {X_q.shape} and X_kv {X_kv.shape}")
    pos_q = _positions(P_q, X_q)
    pos_kv = _positions(P_kv, X_kv)
    q_in = X_q if pos_q is None else X_q + pos_q
    k_in = X_kv if pos_kv is None else X_kv + pos_kv
    Q = head.weight[0] @ q_in
    K = head.weight[1] @ k_in
    V = head.weight[2] @ X_kv
    return Q, K, V


def attention_weights(Q: Tensor, K: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
    """alpha[i, j] = softmax_j(Q_i . K_j / sqrt(d')); masked keys get zero weight."""
    if Q.ndim != 2 or K.ndim != 2 or Q.shape[0] != K.shape[0]:
        raise ShapeError(f"attention_weights expects a shared d', got Q {Q.shape} and K {K.shape}")
    scores = ops.scale(Q.T @ K, 1.0 / np.sqrt(Q.shape[0]))
    if key_mask is not None:
        key_mask = np.asarray(key_mask)
        if key_mask.shape != (K.shape[1],):
            raise ShapeError(f"key mask {key_mask.shape} does not match {K.shape[1]} keys")
        scores = scores + np.where(key_mask > 0, 0.0, MASKED_SCORE)[None, :]
    return ops.softmax(scores, axis=1)


def attention_apply(alpha: Tensor, V: Tensor) -> Tensor:
    """Column i is sum_j alpha[i, j] V_j."""
    if alpha.ndim != 2 or V.ndim != 2 or alpha.shape[1] != V.shape[1]:
        raise ShapeError(f"attention_apply shape mismatch: alpha {alpha.shape}, V {V.shape}")
    return V @ alpha.T


class MultiHeadAttention(Module):
    """Concatenated heads, output projection L, dropout, residual layernorm."""

    def __init__(self, d: int, n_heads: int, dropout: float, rng: np.random.Generator):
        if n_heads <= 0 or d % n_heads:
            raise ParameterError(f"model width {d} is not divisible by {n_heads} heads")
        self.heads = [AttentionHead(d, d // n_heads, rng) for _ in range(n_heads)]
        self.out_proj = uniform(rng, (d, d), fan_in=d)
        self.norm_gamma = ones(d)
        self.norm_beta = zeros(d)
        self.dropout = dropout

    def forward(
        self,
        X_q: Tensor,
        X_kv: Tensor,
        P_q: PositionsLike = None,
        P_kv: PositionsLike = None,
        key_mask: Optional[np.ndarray] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        outputs = []
        for head in self.heads:
            Q, K, V = qkv_project(X_q, X_kv, P_q, P_kv, head)
            outputs.append(attention_apply(attention_weights(Q, K, key_mask), V))
        projected = self.out_proj @ ops.concat(outputs, axis=0)
        projected = ops.dropout(projected, self.dropout, self.training, rng)
        return ops.layer_norm(X_q + projected, self.norm_gamma, self.norm_beta, axis=0)


class FeedForward(Module):
    """Position-wise d -> d_ff -> d with residual layernorm."""

    def __init__(self, d: int, d_ff: int, dropout: float, rng: np.random.Generator):
        self.w1 = uniform(rng, (d_ff, d), fan_in=d)
        self.b1 = zeros(d_ff)
        self.w2 = uniform(rng, (d, d_ff), fan_in=d_ff)
        self.b2 = zeros(d)
        self.norm_gamma = ones(d)
        self.norm_beta = zeros(d)
        self.dropout = dropout

    def forward(self, X: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        hidden = ops.relu(self.w1 @ X + ops.reshape(self.b1, (-1, 1)))
        out = self.w2 @ hidden + ops.reshape(self.b2, (-1, 1))
        out = ops.dropout(out, self.dropout, self.training, rng)
        return ops.layer_norm(X + out, self.norm_gamma, self.norm_beta, axis=0)


class EncoderLayer(Module):
    def __init__(self, d: int, n_heads: int, dropout: float, rng: np.random.Generator, d_ff: Optional[int] = None):
        self.self_attn = MultiHeadAttention(d, n_heads, dropout, rng)
        self.ffn = FeedForward(d, d_ff or 4 * d, dropout, rng)

    def forward(
        self,
        X: Tensor,
        P: PositionsLike = None,
        key_mask: Optional[np.ndarray] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        return self.ffn(self.self_attn(X, X, P, P, key_mask=key_mask, rng=rng), rng=rng)


class DecoderLayer(Module):
    """Unmasked self-attention, cross-attention into memory, feed-forward."""

    def __init__(self, d: int, n_heads: int, dropout: float, rng: np.random.Generator, d_ff: Optional[int] = None):
        self.self_attn = MultiHeadAttention(d, n_heads, dropout, rng)
        self.cross_attn = MultiHeadAttention(d, n_heads, dropout, rng)
        self.ffn = FeedForward(d, d_ff or 4 * d, dropout, rng)

    def forward(
        self,
        X_dec: Tensor,
        memory: Tensor,
        P_dec: PositionsLike = None,
        P_mem: PositionsLike = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        x = self.self_attn(X_dec, X_dec, P_dec, P_dec, rng=rng)
        x = self.cross_attn(x, memory, P_dec, P_mem, rng=rng)
        return self.ffn(x, rng=rng)


def multi_head(
    X_q: Tensor,
    X_kv: Tensor,
    layer: Union[EncoderLayer, MultiHeadAttention],
    P_q: PositionsLike = None,
    P_kv: PositionsLike = None,
    key_mask: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    attn = layer.self_attn if isinstance(layer, EncoderLayer) else layer
    return attn(X_q, X_kv, P_q, P_kv, key_mask=key_mask, rng=rng)


def encoder_layer_forward(
    X: Tensor,
    P: PositionsLike,
    layer: EncoderLayer,
    key_mask: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    return layer(X, P, key_mask=key_mask, rng=rng)


def decoder_layer_forward(
    X_dec: Tensor,
    memory: Tensor,
    P_dec: PositionsLike,
    P_mem: PositionsLike,
    layer: DecoderLayer,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    return layer(X_dec, memory, P_dec, P_mem, rng=rng)


def stack_forward(X: Tensor, layers: Sequence[EncoderLayer], P: PositionsLike = None, **kwargs) -> Tensor:
    for layer in layers:
        X = layer(X, P, **kwargs)
    return X
