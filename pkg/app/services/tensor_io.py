"""GMLT tensor files.

Layout: ``b"GMLT" | u8 version=1 | u8 dtype=1 (f32) | u8 ndim=5 | u32 dims x5 | f32 payload``,
all little-endian, row-major with W fastest.
"""
from __future__ import annotations

import struct
from typing import Union

import numpy as np

from app.autograd.tensor import Tensor
from app.utils.exceptions import (
    BadMagicError, DimensionError, DimensionOverflowError, FormatError, StorageError, TruncatedPayloadError,
    UnsupportedVersionError,
)
from app.utils.logger import get_loggers
from app.utils.retry_decorators import read_bytes, write_bytes

logger = get_loggers("TensorIO")

TENSOR_MAGIC = b"GMLT"
TENSOR_VERSION = 1
DTYPE_F32 = 1
RANK = 5
MAX_ELEMENTS = 2 ** 31 // 4
F32_LE = np.dtype("<f4")
U32_MAX = 2 ** 32 - 1


class ByteReader:
    """Cursor over a byte buffer; running past the end is a truncation error."""

    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    @property
    def remaining(self) -> int:
        return len(self.buf) - self.pos

    def take(self, n: int) -> bytes:
        if n > self.remaining:
            raise TruncatedPayloadError(
                f"{self.what}: needed {n} bytes at offset {self.pos}, only {self.remaining} left")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def floats(self, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(4 * count), dtype=F32_LE).astype(np.float32).reshape(shape)


def check_dims(dims, what: str) -> None:
    if any(d < 1 for d in dims):
        raise DimensionOverflowError(f"{what}: zero-sized dimension in {tuple(dims)}")
    if int(np.prod(dims, dtype=np.int64)) > MAX_ELEMENTS:
        raise DimensionOverflowError(f"{what}: {tuple(dims)} exceeds {MAX_ELEMENTS} elements")


def f32_payload(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype=F32_LE).tobytes()


def encode_tensor(t: Union[Tensor, np.ndarray]) -> bytes:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if data.ndim != RANK:
        raise DimensionError(f"tensor files hold (B,C,T,H,W) tensors, got shape {data.shape}")
    if any(d > U32_MAX for d in data.shape):
        raise DimensionOverflowError(f"dimension in {data.shape} does not fit in u32")
    check_dims(data.shape, "tensor")
    header = TENSOR_MAGIC + struct.pack("<BBB", TENSOR_VERSION, DTYPE_F32, RANK)
    return header + struct.pack("<5I", *data.shape) + f32_payload(data)


def decode_tensor(buf: bytes, what: str = "tensor") -> Tensor:
    reader = ByteReader(buf, what)
    if reader.remaining < 4 or reader.take(4) != TENSOR_MAGIC:
        raise BadMagicError(f"{what}: not a GMLT file")
    version, dtype, ndim = reader.unpack("<BBB")
    if version != TENSOR_VERSION:
        raise UnsupportedVersionError(f"{what}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{what}: unsupported dtype code {dtype}")
    if ndim != RANK:
        raise FormatError(f"{what}: expected rank {RANK}, header says {ndim}")
    dims = reader.unpack("<5I")
    check_dims(dims, what)
    data = reader.floats(dims)
    if reader.remaining:
        raise FormatError(f"{what}: {reader.remaining} trailing bytes after payload")
    return Tensor(data)


def write_tensor(path: str, t: Union[Tensor, np.ndarray]) -> None:
    payload = encode_tensor(t)
    try:
        write_bytes(path, payload)
    except OSError as e:
        logger.error(f"Failed to write tensor {path}: {e}")
        raise StorageError(f"cannot write {path}: {e}") from e
    logger.debug(f"Wrote tensor {path} ({len(payload)} bytes)")


def read_tensor(path: str) -> Tensor:
    try:
        buf = read_bytes(path)
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    return decode_tensor(buf, what=path)
