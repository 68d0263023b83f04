"""
Reverse-mode differentiable array built on numpy.

A Tensor owns a numpy buffer, an optional gradient buffer of the same shape and
the closure that maps its output gradient to the gradients of its parents.
Calling ``backward`` on a scalar collects the reachable graph into a Tape and
replays it in reverse.
"""
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from captrfuse.exceptions import ContractError, ParameterError, ShapeError


FLOAT_DTYPES = {
    "float32": np.dtype(np.float32),
    "f32": np.dtype(np.float32),
    "float64": np.dtype(np.float64),
    "f64": np.dtype(np.float64),
}

# Context-local so concurrent inference threads keep their own modes.
_default_dtype: ContextVar[np.dtype] = ContextVar("captrfuse_dtype", default=FLOAT_DTYPES["float32"])
_grad_enabled: ContextVar[bool] = ContextVar("captrfuse_grad_enabled", default=True)

GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
ArrayLike = Union[np.ndarray, float, int, Sequence]


def _as_float_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str):
        if dtype not in FLOAT_DTYPES:
            raise ParameterError(f"unsupported dtype {dtype!r}; use float32 or float64")
        return FLOAT_DTYPES[dtype]
    dtype = np.dtype(dtype)
    if dtype not in (FLOAT_DTYPES["float32"], FLOAT_DTYPES["float64"]):
        raise ParameterError(f"unsupported dtype {dtype}; use float32 or float64")
    return dtype


def get_default_dtype() -> np.dtype:
    return _default_dtype.get()


def set_default_dtype(dtype) -> None:
    _default_dtype.set(_as_float_dtype(dtype))


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Create new tensors in ``dtype`` inside the block (f64 for gradient checks)."""
    token = _default_dtype.set(_as_float_dtype(dtype))
    try:
        yield
    finally:
        _default_dtype.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Run forward passes without recording the graph."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """n-dimensional float array with an optional gradient slot."""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype=None,
        name: Optional[str] = None,
    ):
        dtype = _as_float_dtype(dtype) if dtype is not None else get_default_dtype()
        self.data: np.ndarray = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op: Optional[str] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._grad_fn: Optional[GradFn] = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        """Adopt an existing buffer without copying."""
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.grad = None
        out.name = None
        out.op = None
        out._parents = ()
        out._grad_fn = None
        return out

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad}{label})"

    # ------------------------------------------------------------------
    # Operator sugar; the implementations live in captrfuse.core.ops
    # ------------------------------------------------------------------
    def __add__(self, other):
        from captrfuse.core import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from captrfuse.core import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from captrfuse.core import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from captrfuse.core import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        from captrfuse.core import ops
        return ops.scale(self, 1.0 / float(other))

    def __neg__(self):
        from captrfuse.core import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from captrfuse.core import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from captrfuse.core import ops
        return ops.index(self, key)

    def transpose(self, axes: Optional[Sequence[int]] = None) -> "Tensor":
        from captrfuse.core import ops
        return ops.transpose(self, axes)

    def reshape(self, *shape) -> "Tensor":
        from captrfuse.core import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from captrfuse.core import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        from captrfuse.core import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def relu(self) -> "Tensor":
        from captrfuse.core import ops
        return ops.relu(self)

    def tanh(self) -> "Tensor":
        from captrfuse.core import ops
        return ops.tanh(self)

    def softmax(self, axis: int = -1) -> "Tensor":
        from captrfuse.core import ops
        return ops.softmax(self, axis)

    # ------------------------------------------------------------------
    # Reverse mode
    # ------------------------------------------------------------------
    def backward(self) -> None:
        """Populate ``grad`` on every leaf reachable from this scalar."""
        backward(self)


class Tape:
    """Operations reachable from a root, inputs before outputs."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        # Iterative post-order DFS; deep graphs would overflow the recursion limit.
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def run_backward(self, root: Tensor, grad: np.ndarray) -> None:
        pending: Dict[int, np.ndarray] = {id(root): grad}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is None:
                if node.requires_grad:
                    g = g.astype(node.dtype, copy=True)
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tensor that requires grad")
    Tape.from_root(loss).run_backward(loss, np.ones_like(loss.data))


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    """Leaf tensor that receives gradients."""
    return Tensor(data, requires_grad=True, name=name)
