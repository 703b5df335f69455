"""Frame loading and preprocessing tests."""

import numpy as np
import pytest
from PIL import Image

from fpextract.video import (
    DecodeError,
    crop_frame,
    load_frames,
    preprocess,
    sample_frame_indices,
)


class TestSources:
    def test_pattern_is_deterministic(self):
        a = load_frames("pattern:3x10")
        b = load_frames("pattern:3x10")
        assert a.shape == (10, 256, 256, 3)
        np.testing.assert_array_equal(a, b)

    def test_npy_stack(self, tmp_path):
        arr = np.random.default_rng(0).integers(0, 255, size=(6, 64, 80, 3), dtype=np.uint8)
        path = tmp_path / "v.npy"
        np.save(path, arr)
        np.testing.assert_array_equal(load_frames(str(path)), arr)

    def test_frame_directory_sorted(self, tmp_path):
        vid = tmp_path / "vid"
        vid.mkdir()
        for i in (2, 0, 1):
            frame = np.full((32, 32, 3), i * 10, dtype=np.uint8)
            Image.fromarray(frame).save(vid / f"frame_{i:04d}.png")
        frames = load_frames(str(vid))
        assert frames.shape == (3, 32, 32, 3)
        assert [int(f[0, 0, 0]) for f in frames] == [0, 10, 20]

    def test_unsupported_container_raises(self, tmp_path):
        path = tmp_path / "clip.mp4"
        path.write_bytes(b"\x00" * 100)
        with pytest.raises(DecodeError):
            load_frames(str(path))

    def test_empty_directory_raises(self, tmp_path):
        vid = tmp_path / "empty"
        vid.mkdir()
        with pytest.raises(DecodeError):
            load_frames(str(vid))


class TestSampling:
    def test_sixteen_equidistant_cover_endpoints(self):
        idx = sample_frame_indices(100, 16)
        assert len(idx) == 16
        assert idx[0] == 0 and idx[-1] == 99
        assert (np.diff(idx) >= 0).all()

    def test_short_video_repeats_frames(self):
        idx = sample_frame_indices(4, 16)
        assert len(idx) == 16
        assert set(idx) <= {0, 1, 2, 3}

    def test_single_clip_centered(self):
        assert sample_frame_indices(9, 1)[0] == 4


class TestCrop:
    def test_center_crop_geometry(self):
        frame = np.zeros((300, 500, 3), dtype=np.uint8)
        out = crop_frame(frame, 224, "center")
        assert out.shape == (224, 224, 3)

    def test_random_crop_seeded(self):
        frame = np.random.default_rng(1).integers(0, 255, (300, 400, 3), dtype=np.uint8)
        a = crop_frame(frame, 224, "random", np.random.default_rng(7))
        b = crop_frame(frame, 224, "random", np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_preprocess_range_and_dtype(self):
        frames = load_frames("pattern:1x4")
        out = preprocess(frames, crop=128)
        assert out.shape == (4, 128, 128, 3)
        assert out.dtype == np.float32
        assert 0.0 <= out.min() and out.max() <= 1.0

    def test_upscales_small_frames(self):
        frame = np.zeros((50, 60, 3), dtype=np.uint8)
        assert crop_frame(frame, 224, "center").shape == (224, 224, 3)
