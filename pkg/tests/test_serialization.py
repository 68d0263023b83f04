import struct

import numpy as np
import pytest

from captrfuse.core.serialization import MAGIC, dumps, load_tensor, loads, save_tensor
from captrfuse.exceptions import IntegrityError, ParameterError


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_round_trip(tmp_path, dtype):
    value = np.random.default_rng(0).normal(size=(2, 3, 4)).astype(dtype)
    save_tensor(tmp_path / "x.ten", value)
    restored = load_tensor(tmp_path / "x.ten")
    assert restored.dtype == dtype
    np.testing.assert_array_equal(restored, value)


def test_header_is_little_endian():
    buffer = dumps(np.zeros((2, 5), dtype=np.float64))
    assert buffer[:4] == MAGIC
    assert buffer[4] == 1
    assert struct.unpack_from("<I", buffer, 5) == (2,)
    assert struct.unpack_from("<2Q", buffer, 9) == (2, 5)


def test_big_endian_input_is_normalised():
    value = np.arange(4, dtype=">f8")
    assert dumps(value) == dumps(value.astype("<f8"))


def test_scalar_round_trip():
    np.testing.assert_array_equal(loads(dumps(np.float64(2.5))), np.float64(2.5))


def test_rejects_integer_arrays():
    with pytest.raises(ParameterError):
        dumps(np.arange(3))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"XXXX" + b[4:],
        lambda b: b[:3],
        lambda b: b[:-1],
        lambda b: b[:4] + bytes([9]) + b[5:],
    ],
)
def test_damaged_buffers(mutate):
    buffer = dumps(np.ones(3, dtype=np.float32))
    with pytest.raises(IntegrityError) as info:
        loads(mutate(buffer), name="w")
    assert info.value.tensor == "w"


def test_missing_file_names_tensor(tmp_path):
    with pytest.raises(IntegrityError) as info:
        load_tensor(tmp_path / "absent.ten")
    assert info.value.tensor == "absent.ten"
