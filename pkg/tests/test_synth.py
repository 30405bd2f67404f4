import os

import numpy as np
import pytest

from app.schemas.config import GenParams
from app.schemas.records import SEED_MAX, Label, Manifest, ManifestRecord
from app.services.synth_service import (
    MANIFEST_NAME, clamp_box, crop_box, crop_sequence, gen_sequence, load_dataset, manipulated_region,
    plan_dataset, read_manifest, sample_frames, sample_seed, second_difference_energy, write_dataset,
    write_manifest,
)


@pytest.mark.parametrize("w,h,side", [(100, 100, 200), (64, 100, 160), (50, 200, 200)])
def test_crop_box_side(w, h, side):
    x0, y0, got = crop_box(w, h, (300, 300))
    assert got == side
    assert (x0, y0) == (300 - side // 2, 300 - side // 2)
    assert crop_box(h, w, (300, 300)) == (x0, y0, got)


def test_crop_box_rounds_half_up():
    # 2*sqrt(1.5625) = 2.5
    assert crop_box(1.5625, 1, (0, 0))[2] == 3


def test_crop_box_rejects_non_positive():
    with pytest.raises(ValueError):
        crop_box(0, 10, (5, 5))


def test_clamp_box_shifts_into_image():
    assert clamp_box((-10, 5, 20), 100, 50) == (0, 5, 20)
    assert clamp_box((95, 40, 20), 100, 50) == (80, 30, 20)
    assert clamp_box((0, 0, 80), 100, 50) == (0, 0, 50)


def test_crop_sequence_uses_first_frame_box(rng):
    frames = rng.uniform(0, 1, size=(3, 60, 80, 3))
    out = crop_sequence(frames, face=(20, 10, 16, 16), out_size=32)
    assert out.shape == (1, 3, 3, 32, 32)
    assert out.data.min() >= 0 and out.data.max() <= 1


def test_crop_sequence_without_resize_is_the_crop():
    frames = (np.arange(2 * 40 * 40) % 251).astype(np.uint8).reshape(2, 40, 40, 1)
    out = crop_sequence(frames, face=(10, 10, 8, 8), out_size=16)
    # face centre (14, 14), side 16 -> box (6, 6, 16)
    np.testing.assert_allclose(out.data[0, 0], frames[:, 6:22, 6:22, 0] / 255.0, atol=1e-7)


def test_sample_frames_examples():
    assert sample_frames(32) == [list(range(0, 16, 2)), list(range(16, 32, 2))]
    assert sample_frames(15) == [list(range(0, 15, 2))]
    assert sample_frames(7) == []


def test_sample_frames_windows_never_overlap():
    windows = sample_frames(100, stride=3, seq_len=5)
    flat = [i for w in windows for i in w]
    assert len(flat) == len(set(flat))
    assert all(b - a == 3 for a, b in zip(flat, flat[1:]))


def test_gen_sequence_is_deterministic(small_gen_params):
    for label in Label:
        a = gen_sequence(small_gen_params, label, seed=42).tensor.data
        b = gen_sequence(small_gen_params, label, seed=42).tensor.data
        assert a.tobytes() == b.tobytes()
        assert a.shape == (1, 3, 6, 16, 16) and a.dtype == np.float32
        assert a.min() >= 0 and a.max() <= 1


def test_fake_differs_from_real_only_inside_region():
    params = GenParams()
    real = gen_sequence(params, Label.REAL, seed=3).tensor.data
    fake = gen_sequence(params, Label.FAKE, seed=3).tensor.data
    y0, x0, rh, rw = manipulated_region(params, seed=3)
    outside = np.ones(real.shape, dtype=bool)
    outside[..., y0:y0 + rh, x0:x0 + rw] = False
    np.testing.assert_array_equal(real[outside], fake[outside])
    assert not np.array_equal(real, fake)


def test_vanishing_jitter_reproduces_real():
    params = GenParams(jitter_amp=1e-9)
    real = gen_sequence(params, Label.REAL, seed=5).tensor.data
    fake = gen_sequence(params, Label.FAKE, seed=5).tensor.data
    np.testing.assert_allclose(fake, real, atol=1e-6)


def test_fake_needs_jitter():
    with pytest.raises(ValueError):
        gen_sequence(GenParams(jitter_amp=0.0), Label.FAKE, seed=1)
    gen_sequence(GenParams(jitter_amp=0.0), Label.REAL, seed=1)


def test_second_difference_separates_fake_from_real():
    params = GenParams()
    wins = 0
    for seed in range(100):
        region = manipulated_region(params, seed)
        real = gen_sequence(params, Label.REAL, seed).tensor.data
        fake = gen_sequence(params, Label.FAKE, seed).tensor.data
        wins += second_difference_energy(fake, region) > second_difference_energy(real, region)
    assert wins >= 95


def test_plan_dataset_counts_and_seeds():
    manifest = plan_dataset(10, 0.3, seed=7)
    assert sum(manifest.labels) == 3
    assert manifest.records[0].path == "sample_00000.gmlt"
    assert manifest.records[4].seed == 7 * 1_000_003 + 4


def test_sample_seed_keeps_all_64_bits(tmp_path):
    seed = sample_seed(2 ** 62, 0)
    assert seed == 3 * 2 ** 62
    assert sample_seed(SEED_MAX, 1) == (SEED_MAX * 1_000_003 + 1) % 2 ** 64
    manifest = Manifest(records=[
        ManifestRecord(path="a.gmlt", label=Label.FAKE, seed=seed),
        ManifestRecord(path="b.gmlt", label=Label.REAL, seed=SEED_MAX),
    ])
    write_manifest(str(tmp_path / MANIFEST_NAME), manifest)
    assert read_manifest(str(tmp_path / MANIFEST_NAME)) == manifest


def test_manifest_seed_must_fit_64_bits():
    with pytest.raises(ValueError):
        ManifestRecord(path="a.gmlt", label=Label.REAL, seed=2 ** 64)


@pytest.mark.asyncio
async def test_write_dataset_round_trip(tmp_path, small_gen_params):
    out = tmp_path / "data"
    manifest = await write_dataset(str(out), 6, 0.5, small_gen_params, seed=7)
    assert read_manifest(str(out / MANIFEST_NAME)) == manifest
    lines = (out / MANIFEST_NAME).read_text().splitlines()
    assert len(lines) == 6 and lines[0].count(",") == 2
    dataset = load_dataset(str(out))
    assert dataset.tensors.shape == (6, 3, 6, 16, 16)
    assert dataset.labels.tolist() == manifest.labels
    expected = gen_sequence(small_gen_params, manifest.records[2].label, manifest.records[2].seed).tensor.data
    np.testing.assert_array_equal(dataset.tensors[2:3], expected)


@pytest.mark.asyncio
async def test_write_dataset_is_byte_identical(tmp_path, small_gen_params):
    await write_dataset(str(tmp_path / "a"), 4, 0.5, small_gen_params, seed=7)
    await write_dataset(str(tmp_path / "b"), 4, 0.5, small_gen_params, seed=7)
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b"))
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_load_dataset_rejects_empty_manifest(tmp_path):
    (tmp_path / MANIFEST_NAME).write_text("")
    with pytest.raises(ValueError):
        load_dataset(str(tmp_path))
