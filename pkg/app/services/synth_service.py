"""Synthetic real/fake sequences, crop geometry and dataset materialisation.

Real sequences show a static smooth texture with Gaussian blobs translating at
constant per-blob velocity, so motion is temporally consistent. Fake sequences
take the paired real sequence and, inside one sub-region, displace the content
by an independent sub-pixel offset per frame.
"""
from __future__ import annotations

import asyncio
import math
import os
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from PIL import Image

from app.autograd.tensor import Tensor
from app.config import settings
from app.schemas.config import GenParams
from app.schemas.records import SEED_MAX, Label, Manifest, ManifestRecord
from app.services.tensor_io import read_tensor, write_tensor
from app.utils.exceptions import StorageError
from app.utils.logger import get_loggers

logger = get_loggers("SynthService")

MANIFEST_NAME = "manifest.csv"
SEED_MASK = SEED_MAX
Box = Tuple[int, int, int]
Region = Tuple[int, int, int, int]


@dataclass
class SequenceSample:
    tensor: Tensor
    label: Label
    seed: int


@dataclass
class SequenceDataset:
    tensors: np.ndarray
    labels: np.ndarray
    seeds: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def crop_box(face_w: float, face_h: float, center: Tuple[float, float]) -> Box:
    """Square ``2*sqrt(w*h)`` box centred on the face, not clamped to the image."""
    if face_w <= 0 or face_h <= 0:
        raise ValueError(f"face size must be positive, got {face_w}x{face_h}")
    side = _round_half_up(2.0 * math.sqrt(face_w * face_h))
    cx, cy = center
    return _round_half_up(cx - side / 2), _round_half_up(cy - side / 2), side


def clamp_box(box: Box, img_w: int, img_h: int) -> Box:
    x0, y0, side = box
    side = min(side, img_w, img_h)
    x0 = min(max(x0, 0), img_w - side)
    y0 = min(max(y0, 0), img_h - side)
    return x0, y0, side


def crop_sequence(frames: np.ndarray, face: Tuple[float, float, float, float], out_size: int = 224) -> Tensor:
    """Crop every frame with the box of the first frame's face and resize.

    ``frames`` is (T, H, W, C) in [0, 1] or uint8; ``face`` is (x, y, w, h) of the
    first frame. Returns a (1, C, T, out_size, out_size) tensor in [0, 1].
    """
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ValueError(f"frames must be (T, H, W, C), got {frames.shape}")
    if frames.dtype != np.uint8:
        frames = np.clip(np.round(frames * 255.0), 0, 255).astype(np.uint8)
    t_len, img_h, img_w, channels = frames.shape
    x, y, w, h = face
    x0, y0, side = clamp_box(crop_box(w, h, (x + w / 2, y + h / 2)), img_w, img_h)
    out = np.empty((channels, t_len, out_size, out_size), dtype=np.float32)
    for t in range(t_len):
        patch = frames[t, y0:y0 + side, x0:x0 + side]
        for c in range(channels):
            img = Image.fromarray(np.ascontiguousarray(patch[:, :, c]))
            resized = img.resize((out_size, out_size), resample=Image.Resampling.BILINEAR)
            out[c, t] = np.asarray(resized, dtype=np.float32) / 255.0
    return Tensor(out[None])


def sample_frames(video_len: int, stride: int = 2, seq_len: int = 8) -> List[List[int]]:
    """Keep every ``stride``-th frame and group kept frames into disjoint windows."""
    if stride < 1 or seq_len < 1:
        raise ValueError(f"stride and seq_len must be positive, got {stride}, {seq_len}")
    kept = list(range(0, max(video_len, 0), stride))
    return [kept[i:i + seq_len] for i in range(0, len(kept) - seq_len + 1, seq_len)]


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample a (..., H, W) image at float coordinates, clamped to the border."""
    h, w = img.shape[-2:]
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy, fx = ys - y0, xs - x0
    top = img[..., y0, x0] * (1 - fx) + img[..., y0, x1] * fx
    bottom = img[..., y1, x0] * (1 - fx) + img[..., y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def _render_real(params: GenParams, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0])
    c, t_len, h, w = params.shape
    cells = params.texture_cells
    coarse = rng.uniform(0.0, 1.0, size=(c, cells + 1, cells + 1))
    gy, gx = np.meshgrid(np.linspace(0, cells, h), np.linspace(0, cells, w), indexing="ij")
    background = 0.15 + params.texture_amp * _bilinear(coarse, gy, gx)
    frames = np.repeat(background[:, None], t_len, axis=1)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    for _ in range(params.blob_count):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        speed = rng.uniform(*params.velocity_range)
        angle = rng.uniform(0, 2 * np.pi)
        vy, vx = speed * np.sin(angle), speed * np.cos(angle)
        sigma = rng.uniform(*params.sigma_range)
        color = rng.uniform(0.3, 0.6, size=c)
        for t in range(t_len):
            d2 = (yy - (cy + vy * t)) ** 2 + (xx - (cx + vx * t)) ** 2
            frames[:, t] += color[:, None, None] * np.exp(-d2 / (2 * sigma ** 2))
    return frames


def manipulated_region(params: GenParams, seed: int) -> Region:
    """(y0, x0, rh, rw) of the sub-region a fake sequence with this seed perturbs."""
    rng = np.random.default_rng([seed, 1])
    return _draw_region(params, rng)


def _draw_region(params: GenParams, rng: np.random.Generator) -> Region:
    scale = math.sqrt(params.region_fraction)
    rh = max(1, _round_half_up(params.height * scale))
    rw = max(1, _round_half_up(params.width * scale))
    y0 = int(rng.integers(0, params.height - rh + 1))
    x0 = int(rng.integers(0, params.width - rw + 1))
    return y0, x0, rh, rw


def _manipulate(real: np.ndarray, params: GenParams, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 1])
    y0, x0, rh, rw = _draw_region(params, rng)
    fake = real.copy()
    ry, rx = np.meshgrid(np.arange(y0, y0 + rh, dtype=np.float64),
                         np.arange(x0, x0 + rw, dtype=np.float64), indexing="ij")
    for t in range(real.shape[1]):
        magnitude = rng.uniform(0.5, 1.0) * params.jitter_amp
        angle = rng.uniform(0, 2 * np.pi)
        dy, dx = magnitude * np.sin(angle), magnitude * np.cos(angle)
        fake[:, t, y0:y0 + rh, x0:x0 + rw] = _bilinear(real[:, t], ry - dy, rx - dx)
    return fake


def gen_sequence(params: GenParams, label: Label, seed: int) -> SequenceSample:
    label = Label(label)
    if label is Label.FAKE and params.jitter_amp <= 0:
        raise ValueError("fake sequences need jitter_amp > 0")
    frames = _render_real(params, seed)
    if label is Label.FAKE:
        frames = _manipulate(frames, params, seed)
    frames = np.clip(frames, 0.0, 1.0).astype(np.float32)
    return SequenceSample(Tensor(frames[None]), label, seed)


def second_difference_energy(tensor: np.ndarray, region: Optional[Region] = None) -> float:
    """Mean of |x_t - 2 x_{t-1} + x_{t-2}| over t >= 2, optionally inside a region."""
    x = np.asarray(tensor, dtype=np.float64)
    if region is not None:
        y0, x0, rh, rw = region
        x = x[..., y0:y0 + rh, x0:x0 + rw]
    accel = x[:, :, 2:] - 2 * x[:, :, 1:-1] + x[:, :, :-2]
    return float(np.abs(accel).mean())


def sample_seed(base_seed: int, index: int) -> int:
    return (base_seed * 1_000_003 + index) & SEED_MASK


def plan_dataset(count: int, fake_ratio: float, seed: int) -> Manifest:
    if count < 0 or not 0 <= fake_ratio <= 1:
        raise ValueError(f"need count >= 0 and fake_ratio in [0, 1], got {count}, {fake_ratio}")
    n_fake = _round_half_up(count * fake_ratio)
    fake_idx = set(np.random.default_rng([seed, 2]).permutation(count)[:n_fake].tolist())
    return Manifest(records=[
        ManifestRecord(path=f"sample_{i:05d}.gmlt",
                       label=Label.FAKE if i in fake_idx else Label.REAL,
                       seed=sample_seed(seed, i))
        for i in range(count)
    ])


async def write_dataset(out_dir: str, count: int, fake_ratio: float, params: GenParams, seed: int) -> Manifest:
    manifest = plan_dataset(count, fake_ratio, seed)
    os.makedirs(out_dir, exist_ok=True)
    semaphore = asyncio.Semaphore(settings.GEN_WORKERS)

    async def _write_one(record: ManifestRecord) -> None:
        async with semaphore:
            sample = await asyncio.to_thread(gen_sequence, params, record.label, record.seed)
            await asyncio.to_thread(write_tensor, os.path.join(out_dir, record.path), sample.tensor)

    results = await asyncio.gather(*(_write_one(r) for r in manifest.records), return_exceptions=True)
    errors = [r for r in results if isinstance(r, Exception)]
    if errors:
        logger.error(f"{len(errors)} samples failed to write: {errors[:3]}")
        raise errors[0]
    write_manifest(os.path.join(out_dir, MANIFEST_NAME), manifest)
    logger.info(f"Wrote {count} sequences ({sum(manifest.labels)} fake) to {out_dir}")
    return manifest


def write_manifest(path: str, manifest: Manifest) -> None:
    frame = pd.DataFrame(
        [(r.path, int(r.label), r.seed) for r in manifest.records],
        columns=["path", "label", "seed"],
    )
    try:
        frame.to_csv(path, header=False, index=False, lineterminator="\n")
    except OSError as e:
        raise StorageError(f"cannot write manifest {path}: {e}") from e


def read_manifest(path: str) -> Manifest:
    try:
        frame = pd.read_csv(path, header=None, names=["path", "label", "seed"],
                            dtype={"path": str, "label": "int64", "seed": "uint64"})
    except pd.errors.EmptyDataError:
        return Manifest()
    except OSError as e:
        raise StorageError(f"cannot read manifest {path}: {e}") from e
    return Manifest(records=[
        ManifestRecord(path=row.path, label=int(row.label), seed=int(row.seed))
        for row in frame.itertuples(index=False)
    ])


def load_dataset(data_dir: str) -> SequenceDataset:
    manifest = read_manifest(os.path.join(data_dir, MANIFEST_NAME))
    if not len(manifest):
        raise ValueError(f"dataset {data_dir} has an empty manifest")
    tensors = [read_tensor(os.path.join(data_dir, r.path)).data for r in manifest.records]
    shapes = {t.shape[1:] for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"dataset {data_dir} mixes sample shapes {sorted(shapes)}")
    logger.info(f"Loaded {len(tensors)} sequences from {data_dir}")
    return SequenceDataset(
        tensors=np.concatenate(tensors, axis=0),
        labels=np.array(manifest.labels, dtype=np.int64),
        seeds=np.array([r.seed for r in manifest.records], dtype=np.uint64),
    )
