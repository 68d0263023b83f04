"""
Differentiable primitives.

Every function takes Tensors (plain arrays and numbers are wrapped as
constants), computes the forward value with numpy and, when any input requires
grad, attaches a closure returning one gradient per input.

Contracts beyond the individually documented operations:
  - add/sub/mul broadcast like numpy; backward sums the gradient back to each
    input's shape.
  - scale multiplies by a Python float.
  - concat, transpose, reshape and index are pure data movement.
  - embedding gathers rows of a table by integer id (ids are not differentiable).
  - sum/mean reduce over an axis or everything; tanh is elementwise.
"""
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from captrfuse.core.tensor import Tensor, get_default_dtype, is_grad_enabled
from captrfuse.exceptions import ContractError, ParameterError, ShapeError, TokenIndexError

Operand = Union[Tensor, np.ndarray, float, int]


def as_tensor(x: Operand) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn, op: str) -> Tensor:
    dtype = np.result_type(*(p.data.dtype for p in parents))
    out = Tensor._wrap(np.asarray(data, dtype=dtype))
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
        out.op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ParameterError(f"axis {axis} is invalid for a tensor of rank {x.ndim}")
    return axis % x.ndim


# ----------------------------------------------------------------------
# Elementwise arithmetic
# ----------------------------------------------------------------------
def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from e

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), grad_fn, "add")


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as e:
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}") from e

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), grad_fn, "sub")


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from e

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), grad_fn, "mul")


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _make(x.data * factor, (x,), lambda g: (g * factor,), "scale")


# ----------------------------------------------------------------------
# Linear algebra and data movement
# ----------------------------------------------------------------------
def matmul(a: Operand, b: Operand) -> Tensor:
    """Matrix product of a (m×k) with b (k×n) or a vector b (k)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), (a.shape[0],))

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), grad_fn, "matmul")


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from e
    return _make(data, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(tensors: Sequence[Operand], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]} on axis {axis}") from e
    boundaries = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, boundaries, axis=axis))

    return _make(data, tensors, grad_fn, "concat")


def index(x: Tensor, key) -> Tensor:
    data = x.data[key]

    def grad_fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(np.array(data), (x,), grad_fn, "index")


def embedding(table: Tensor, ids: Union[np.ndarray, Sequence[int]]) -> Tensor:
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise TokenIndexError(f"id out of range [0, {table.shape[0]}): {ids.min()}..{ids.max()}")

    def grad_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _make(table.data[ids], (table,), grad_fn, "embedding")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), grad_fn, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ----------------------------------------------------------------------
# Nonlinearities
# ----------------------------------------------------------------------
def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at 0 is 0."""
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax; rows along ``axis`` sum to one."""
    axis = _check_axis(x, axis)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _make(y, (x,), grad_fn, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    y = _log_softmax(x.data, axis)

    def grad_fn(g):
        return (g - np.exp(y) * np.sum(g, axis=axis, keepdims=True),)

    return _make(y, (x,), grad_fn, "log_softmax")


def _log_softmax(data: np.ndarray, axis: int) -> np.ndarray:
    shifted = data - np.max(data, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


# ----------------------------------------------------------------------
# Normalisation and regularisation
# ----------------------------------------------------------------------
def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Normalise along ``axis`` with population variance, then scale and shift.

    A constant row maps to ``beta`` exactly.
    """
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    axis = _check_axis(x, axis)
    n = x.shape[axis]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match dimension {n}")
    bshape = [1] * x.ndim
    bshape[axis] = n
    reduce_axes = tuple(a for a in range(x.ndim) if a != axis)
    g_b = gamma.data.reshape(bshape)

    mu = np.mean(x.data, axis=axis, keepdims=True)
    centered = x.data - mu
    constant = np.ptp(x.data, axis=axis, keepdims=True) == 0
    centered = np.where(constant, 0.0, centered)
    var = np.mean(centered * centered, axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    y = xhat * g_b + beta.data.reshape(bshape)

    def grad_fn(g):
        dxhat = g * g_b
        dx = inv * (
            dxhat
            - np.mean(dxhat, axis=axis, keepdims=True)
            - xhat * np.mean(dxhat * xhat, axis=axis, keepdims=True)
        )
        return dx, np.sum(g * xhat, axis=reduce_axes), np.sum(g, axis=reduce_axes)

    return _make(y, (x, gamma, beta), grad_fn, "layer_norm")


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: kept entries are divided by 1-p; eval mode is identity."""
    if p < 0 or (training and p >= 1):
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a seeded generator")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ----------------------------------------------------------------------
# Losses
# ----------------------------------------------------------------------
def masked_cross_entropy(
    logits: Tensor,
    targets: Union[np.ndarray, Sequence[int]],
    mask: Union[np.ndarray, Sequence[bool]],
) -> Tensor:
    """Sum over masked-in rows of -log softmax(logits_i)[target_i].

    Masked-out rows contribute exactly zero.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],) or mask.shape != targets.shape:
        raise ShapeError(
            f"masked_cross_entropy expects logits (l, V) with l targets and l mask entries; "
            f"got {logits.shape}, {targets.shape}, {mask.shape}"
        )
    vocab = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise TokenIndexError(f"target id out of range [0, {vocab}): {targets.min()}..{targets.max()}")

    rows = np.arange(targets.shape[0])
    logp = _log_softmax(logits.data, axis=1)
    picked = logp[rows, targets]
    loss = np.where(mask, -picked, 0.0).sum()

    def grad_fn(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        d *= mask[:, None]
        return (d * g,)

    return _make(np.asarray(loss), (logits,), grad_fn, "masked_cross_entropy")


# ----------------------------------------------------------------------
# Convolution
# ----------------------------------------------------------------------
def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a C×H×W input with an O×C×k×k kernel (im2col)."""
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1] != x.shape[0] or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, weight {weight.shape}")
    if stride < 1 or padding < 0:
        raise ParameterError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}/{padding}")
    channels, height, width = x.shape
    out_channels, _, k, _ = weight.shape
    out_h = (height + 2 * padding - k) // stride + 1
    out_w = (width + 2 * padding - k) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d kernel {k} does not fit input {x.shape} with padding {padding}")

    padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride][:, :out_h, :out_w]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(channels * k * k, out_h * out_w)
    w2 = weight.data.reshape(out_channels, -1)
    out = w2 @ cols
    if bias is not None:
        out = out + bias.data[:, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        g2 = g.reshape(out_channels, -1)
        dweight = (g2 @ cols.T).reshape(weight.shape)
        dcols = (w2.T @ g2).reshape(channels, k, k, out_h, out_w)
        dpadded = np.zeros_like(padded)
        for ki in range(k):
            for kj in range(k):
                dpadded[
                    :,
                    ki : ki + stride * (out_h - 1) + 1 : stride,
                    kj : kj + stride * (out_w - 1) + 1 : stride,
                ] += dcols[:, ki, kj]
        dx = dpadded[:, padding : padding + height, padding : padding + width]
        if bias is None:
            return dx, dweight
        return dx, dweight, g2.sum(axis=1)

    return _make(out.reshape(out_channels, out_h, out_w), parents, grad_fn, "conv2d")


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=get_default_dtype()))
