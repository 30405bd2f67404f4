"""Per-frame PGM heatmaps of the anomaly-branch clue map F*."""
from __future__ import annotations

import io
from typing import List

import numpy as np
from PIL import Image

from app.autograd.tensor import Tensor
from app.utils.exceptions import DimensionError, StorageError
from app.utils.logger import get_loggers
from app.utils.retry_decorators import write_bytes

logger = get_loggers("HeatmapService")


def heatmap_frames(f_star: np.ndarray) -> np.ndarray:
    """(1, C, T, H, W) clue map -> (T, H, W) uint8, min-max normalised per frame."""
    f = np.asarray(f_star, dtype=np.float64)
    if f.ndim != 5 or f.shape[0] != 1:
        raise DimensionError(f"heatmaps need a (1,C,T,H,W) clue map, got {f.shape}")
    h = np.abs(f[0]).mean(axis=0)
    lo = h.min(axis=(1, 2), keepdims=True)
    span = h.max(axis=(1, 2), keepdims=True) - lo
    flat = span == 0
    scaled = (h - lo) / np.where(flat, 1.0, span) * 255.0
    out = np.floor(scaled + 0.5)
    out[np.broadcast_to(flat, out.shape)] = 0
    return out.astype(np.uint8)


def encode_pgm(frame: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(frame, dtype=np.uint8)).save(buf, format="PPM")
    return buf.getvalue()


def export_heatmap(f_star: Tensor, path_prefix: str) -> List[str]:
    frames = heatmap_frames(f_star.data if isinstance(f_star, Tensor) else f_star)
    paths = []
    for t, frame in enumerate(frames):
        path = f"{path_prefix}_t{t}.pgm"
        try:
            write_bytes(path, encode_pgm(frame))
        except OSError as e:
            logger.error(f"Failed to write heatmap {path}: {e}")
            raise StorageError(f"cannot write {path}: {e}") from e
        paths.append(path)
    logger.info(f"Wrote {len(paths)} heatmap frames to {path_prefix}_t*.pgm")
    return paths
