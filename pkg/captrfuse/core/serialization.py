"""
The ".ten" tensor format.

Layout (little-endian throughout):
    b"TEN1" | u8 dtype code (0=f32, 1=f64) | u32 rank | rank × u64 dims | payload
"""
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from captrfuse.core.tensor import Tensor
from captrfuse.exceptions import IntegrityError, ParameterError

MAGIC = b"TEN1"
DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
CODE_DTYPES = {code: dtype.newbyteorder("<") for dtype, code in DTYPE_CODES.items()}
_HEADER = struct.Struct("<4sBI")


def dumps(value: Union[Tensor, np.ndarray]) -> bytes:
    array = value.data if isinstance(value, Tensor) else np.asarray(value)
    dtype = np.dtype(array.dtype).newbyteorder("=")
    if dtype not in DTYPE_CODES:
        raise ParameterError(f".ten stores float32/float64 only, got {array.dtype}")
    code = DTYPE_CODES[dtype]
    header = _HEADER.pack(MAGIC, code, array.ndim) + struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + np.ascontiguousarray(array, dtype=CODE_DTYPES[code]).tobytes()


def loads(buffer: bytes, name: Optional[str] = None) -> np.ndarray:
    if len(buffer) < _HEADER.size:
        raise IntegrityError("truncated header", tensor=name)
    magic, code, rank = _HEADER.unpack_from(buffer, 0)
    if magic != MAGIC:
        raise IntegrityError(f"bad magic {magic!r}", tensor=name)
    if code not in CODE_DTYPES:
        raise IntegrityError(f"unknown dtype code {code}", tensor=name)
    offset = _HEADER.size
    if len(buffer) < offset + 8 * rank:
        raise IntegrityError("truncated shape", tensor=name)
    shape = struct.unpack_from(f"<{rank}Q", buffer, offset)
    offset += 8 * rank
    dtype = CODE_DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buffer) - offset != expected:
        raise IntegrityError(f"payload is {len(buffer) - offset} bytes, expected {expected}", tensor=name)
    array = np.frombuffer(buffer, dtype=dtype, offset=offset).reshape(shape)
    return array.astype(dtype.newbyteorder("="))


def save_tensor(path: Union[str, Path], value: Union[Tensor, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(value))


def load_tensor(path: Union[str, Path], name: Optional[str] = None) -> np.ndarray:
    path = Path(path)
    try:
        buffer = path.read_bytes()
    except OSError as e:
        raise IntegrityError(f"cannot read {path}: {e}", tensor=name or path.name) from e
    return loads(buffer, name=name or path.name)
