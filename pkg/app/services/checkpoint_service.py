"""GMLC checkpoint files.

``b"GMLC" | u8 version=1 | u32 param count | per param: u16 name length, UTF-8 name,
u8 ndim, u32 dims, f32 payload | u64 step | u64 rng state | u8 has_momentum
[per param f32 buffer] | u8 has_config [u32 length, UTF-8 JSON model config]``.
The config trailer is optional; files ending after the momentum section load
with ``model_config=None``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from app.schemas.config import ModelConfig
from app.services.tensor_io import ByteReader, check_dims, f32_payload
from app.utils.exceptions import BadMagicError, DimensionOverflowError, FormatError, StorageError, UnsupportedVersionError
from app.utils.logger import get_loggers
from app.utils.retry_decorators import read_bytes, write_bytes

logger = get_loggers("CheckpointService")

CHECKPOINT_MAGIC = b"GMLC"
CHECKPOINT_VERSION = 1
U64_MASK = 2 ** 64 - 1


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    step: int = 0
    rng_state: int = 0
    velocity: Optional[Dict[str, np.ndarray]] = None
    model_config: Optional[ModelConfig] = field(default=None)

    def same_as(self, other: "Checkpoint") -> bool:
        """Bit-exact comparison of every stored number."""
        if (self.step, self.rng_state) != (other.step, other.rng_state):
            return False
        if list(self.params) != list(other.params):
            return False
        if any(not np.array_equal(self.params[k], other.params[k]) for k in self.params):
            return False
        if (self.velocity is None) != (other.velocity is None):
            return False
        if self.velocity is not None:
            return all(np.array_equal(self.velocity[k], other.velocity[k]) for k in self.params)
        return True


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<BI", CHECKPOINT_VERSION, len(ckpt.params))]
    for name, value in ckpt.params.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF or value.ndim > 0xFF:
            raise DimensionOverflowError(f"parameter {name!r} does not fit the checkpoint header")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        parts.append(f32_payload(value))
    parts.append(struct.pack("<QQ", ckpt.step & U64_MASK, ckpt.rng_state & U64_MASK))
    if ckpt.velocity is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.extend(f32_payload(ckpt.velocity[name]) for name in ckpt.params)
    if ckpt.model_config is None:
        parts.append(struct.pack("<B", 0))
    else:
        blob = ckpt.model_config.model_dump_json().encode("utf-8")
        parts.append(struct.pack("<BI", 1, len(blob)) + blob)
    return b"".join(parts)


def decode_checkpoint(buf: bytes, what: str = "checkpoint") -> Checkpoint:
    reader = ByteReader(buf, what)
    if reader.remaining < 4 or reader.take(4) != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{what}: not a GMLC file")
    version, count = reader.unpack("<BI")
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{what}: unsupported version {version}")
    params: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = reader.unpack("<H")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"{what}: parameter name is not UTF-8") from e
        if name in params:
            raise FormatError(f"{what}: duplicate parameter {name!r}")
        ndim = reader.unpack("<B")
        dims = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        check_dims(dims, f"{what}:{name}")
        params[name] = reader.floats(dims)
    step, rng_state = reader.unpack("<QQ")
    velocity = None
    if reader.unpack("<B"):
        velocity = {name: reader.floats(value.shape) for name, value in params.items()}
    model_config = None
    if reader.remaining and reader.unpack("<B"):
        blob = reader.take(reader.unpack("<I"))
        try:
            model_config = ModelConfig.model_validate_json(blob)
        except ValueError as e:
            raise FormatError(f"{what}: bad model config trailer: {e}") from e
    if reader.remaining:
        raise FormatError(f"{what}: {reader.remaining} trailing bytes")
    return Checkpoint(params, step, rng_state, velocity, model_config)


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    payload = encode_checkpoint(ckpt)
    try:
        write_bytes(path, payload)
    except OSError as e:
        logger.error(f"Failed to save checkpoint {path}: {e}")
        raise StorageError(f"cannot write {path}: {e}") from e
    logger.info(f"Checkpoint saved to {path} at step {ckpt.step} ({len(ckpt.params)} tensors)")


def load_checkpoint(path: str) -> Checkpoint:
    try:
        buf = read_bytes(path)
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    return decode_checkpoint(buf, what=path)
