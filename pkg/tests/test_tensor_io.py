import struct

import numpy as np
import pytest

from app.autograd.tensor import Tensor
from app.services.tensor_io import decode_tensor, encode_tensor, read_tensor, write_tensor
from app.utils.exceptions import (
    BadMagicError, DimensionError, DimensionOverflowError, FormatError, StorageError, TruncatedPayloadError,
    UnsupportedVersionError,
)


def test_round_trip_is_bit_exact(tmp_path, rng):
    data = rng.normal(size=(2, 3, 4, 5, 6)).astype(np.float32)
    data[0, 0, 0, 0, :3] = [np.inf, -0.0, np.nan]
    path = str(tmp_path / "x.gmlt")
    write_tensor(path, Tensor(data))
    assert read_tensor(path).data.tobytes() == data.tobytes()


def test_single_element_file_is_31_bytes(tmp_path):
    path = tmp_path / "one.gmlt"
    write_tensor(str(path), np.ones((1, 1, 1, 1, 1), dtype=np.float32))
    raw = path.read_bytes()
    assert len(raw) == 31
    assert raw[:7] == b"GMLT\x01\x01\x05"
    assert struct.unpack("<5I", raw[7:27]) == (1, 1, 1, 1, 1)
    assert struct.unpack("<f", raw[27:]) == (1.0,)


def test_layout_is_row_major_little_endian():
    data = np.arange(6, dtype=np.float32).reshape(1, 1, 1, 2, 3)
    payload = encode_tensor(data)[27:]
    assert np.frombuffer(payload, dtype="<f4").tolist() == [0, 1, 2, 3, 4, 5]


def _valid(shape=(1, 1, 1, 2, 2)):
    return encode_tensor(np.zeros(shape, dtype=np.float32))


def test_bad_magic():
    with pytest.raises(BadMagicError):
        decode_tensor(b"GMLX" + _valid()[4:])


def test_unsupported_version():
    buf = bytearray(_valid())
    buf[4] = 2
    with pytest.raises(UnsupportedVersionError):
        decode_tensor(bytes(buf))


def test_truncated_payload():
    with pytest.raises(TruncatedPayloadError):
        decode_tensor(_valid()[:-1])
    with pytest.raises(TruncatedPayloadError):
        decode_tensor(b"GMLT\x01")


def test_dimension_overflow():
    header = b"GMLT" + struct.pack("<BBB", 1, 1, 5) + struct.pack("<5I", 2 ** 16, 2 ** 16, 1, 1, 1)
    with pytest.raises(DimensionOverflowError):
        decode_tensor(header)


def test_errors_are_distinct():
    kinds = {BadMagicError, UnsupportedVersionError, DimensionOverflowError, TruncatedPayloadError}
    assert len(kinds) == 4 and all(issubclass(k, FormatError) for k in kinds)


def test_trailing_bytes_rejected():
    with pytest.raises(FormatError):
        decode_tensor(_valid() + b"\x00")


def test_only_rank_five_is_written():
    with pytest.raises(DimensionError):
        encode_tensor(np.zeros((2, 2)))


def test_missing_file_is_storage_error(tmp_path):
    with pytest.raises(StorageError):
        read_tensor(str(tmp_path / "absent.gmlt"))
