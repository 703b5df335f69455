"""Embedding store tests: binary round-trips, manifest validation codes,
clip sampling rules."""

import os

import numpy as np
import pytest

from fuseprobe.store import (
    Manifest,
    ManifestValidationError,
    MissingCLSError,
    StoreError,
    TokenClip,
    VideoRecord,
    load_manifest,
    read_embedding_file,
    read_embedding_header,
    sample_clips,
    save_manifest,
    select_tokens,
    validate_manifest,
    write_embedding_file,
)


@pytest.fixture
def small_dataset(tmp_path):
    """2 classes x 2 views, 3 videos each, 24 frames, N=3, D=6."""
    rng = np.random.default_rng(0)
    records = []
    emb = tmp_path / "emb"
    emb.mkdir()
    for view in ("front", "side"):
        for class_id in range(2):
            for i in range(3):
                vid = f"{view}_c{class_id}_{i}"
                tokens = rng.normal(size=(24, 3, 6)).astype(np.float32)
                write_embedding_file(emb / f"{vid}.fpeb", tokens, cls_index=0)
                split = "train" if (view == "front" and i < 2) else "test"
                records.append(
                    VideoRecord(vid, view, class_id, split, f"emb/{vid}.fpeb", 24)
                )
    manifest = Manifest(
        dataset="toy",
        classes=["a", "b"],
        views=["front", "side"],
        records=records,
        root=str(tmp_path),
    )
    save_manifest(manifest, tmp_path / "manifest.json")
    return manifest, tmp_path


class TestEmbeddingFile:
    def test_roundtrip_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        tokens = rng.normal(size=(5, 4, 7)).astype(np.float32)
        p1 = tmp_path / "a.fpeb"
        p2 = tmp_path / "b.fpeb"
        write_embedding_file(p1, tokens, cls_index=2)
        loaded, cls = read_embedding_file(p1)
        assert cls == 2
        np.testing.assert_array_equal(loaded, tokens)
        write_embedding_file(p2, loaded, cls_index=cls)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_fields(self, tmp_path):
        tokens = np.zeros((8, 2, 3), dtype=np.float32)
        path = tmp_path / "h.fpeb"
        write_embedding_file(path, tokens, cls_index=None)
        f_total, n, d, cls = read_embedding_header(path)
        assert (f_total, n, d, cls) == (8, 2, 3, None)

    def test_magic_check(self, tmp_path):
        path = tmp_path / "bad.fpeb"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(StoreError):
            read_embedding_header(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.fpeb"
        write_embedding_file(path, np.zeros((4, 2, 3), dtype=np.float32))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(StoreError):
            read_embedding_file(path)

    def test_cls_out_of_range(self, tmp_path):
        with pytest.raises(StoreError):
            write_embedding_file(tmp_path / "x.fpeb", np.zeros((1, 2, 3), dtype=np.float32), cls_index=5)


class TestManifestValidation:
    def test_well_formed_counts(self, small_dataset):
        manifest, _ = small_dataset
        report = validate_manifest(manifest)
        assert report.record_count == 12
        assert report.view_counts == {"front": 6, "side": 6}
        assert report.class_counts == {0: 6, 1: 6}
        assert report.split_counts["train"] == 4
        assert report.split_counts["test"] == 8
        assert (report.tokens_per_frame, report.dim) == (3, 6)

    def test_missing_file(self, small_dataset):
        manifest, _ = small_dataset
        manifest.records[0].path = "emb/nothere.fpeb"
        with pytest.raises(ManifestValidationError) as exc:
            validate_manifest(manifest)
        assert any(code == "MISSING_FILE" for code, _ in exc.value.problems)

    def test_header_mismatch(self, small_dataset):
        manifest, _ = small_dataset
        manifest.records[0].frames = 999
        with pytest.raises(ManifestValidationError) as exc:
            validate_manifest(manifest)
        assert any(code == "HEADER_MISMATCH" for code, _ in exc.value.problems)

    def test_unknown_view(self, small_dataset):
        manifest, _ = small_dataset
        manifest.records[0].view = "drone"
        with pytest.raises(ManifestValidationError) as exc:
            validate_manifest(manifest)
        assert any(code == "UNKNOWN_VIEW" for code, _ in exc.value.problems)

    def test_overlapping_splits(self, small_dataset):
        manifest, tmp_path = small_dataset
        dup = manifest.records[0]
        manifest.records.append(
            VideoRecord(dup.video_id, dup.view, dup.class_id, "test", dup.path, dup.frames)
        )
        with pytest.raises(ManifestValidationError) as exc:
            validate_manifest(manifest)
        assert any(code == "OVERLAPPING_SPLITS" for code, _ in exc.value.problems)

    def test_bad_class_id(self, small_dataset):
        manifest, _ = small_dataset
        manifest.records[0].class_id = 7
        with pytest.raises(ManifestValidationError) as exc:
            validate_manifest(manifest)
        assert any(code == "BAD_CLASS_ID" for code, _ in exc.value.problems)

    def test_load_save_roundtrip(self, small_dataset, tmp_path):
        manifest, root = small_dataset
        loaded = load_manifest(root / "manifest.json")
        assert loaded.dataset == manifest.dataset
        assert len(loaded.records) == len(manifest.records)
        validate_manifest(loaded)


class TestSampling:
    def _record(self, manifest):
        return manifest.records[0]

    def test_equidistant_starts_forced(self, tmp_path):
        rng = np.random.default_rng(2)
        tokens = rng.normal(size=(48, 2, 4)).astype(np.float32)
        write_embedding_file(tmp_path / "v.fpeb", tokens, cls_index=0)
        manifest = Manifest(
            "t", ["a"], ["v"],
            [VideoRecord("v", "v", 0, "test", "v.fpeb", 48)], root=str(tmp_path),
        )
        clips = sample_clips(manifest, manifest.records[0], 3, 16, "eval_equidistant")
        for clip, start in zip(clips, (0, 16, 32)):
            np.testing.assert_array_equal(clip.tokens, tokens[start : start + 16])

    def test_loop_padding(self, tmp_path):
        tokens = np.arange(10 * 1 * 2, dtype=np.float32).reshape(10, 1, 2)
        write_embedding_file(tmp_path / "s.fpeb", tokens, cls_index=0)
        manifest = Manifest(
            "t", ["a"], ["v"],
            [VideoRecord("s", "v", 0, "test", "s.fpeb", 10)], root=str(tmp_path),
        )
        clip = sample_clips(manifest, manifest.records[0], 1, 16, "eval_equidistant")[0]
        expected = tokens[np.arange(16) % 10]
        np.testing.assert_array_equal(clip.tokens, expected)
        assert clip.tokens.shape[0] == 16

    def test_exact_length_gives_identical_clips(self, tmp_path):
        rng = np.random.default_rng(3)
        tokens = rng.normal(size=(16, 2, 4)).astype(np.float32)
        write_embedding_file(tmp_path / "e.fpeb", tokens, cls_index=0)
        manifest = Manifest(
            "t", ["a"], ["v"],
            [VideoRecord("e", "v", 0, "test", "e.fpeb", 16)], root=str(tmp_path),
        )
        clips = sample_clips(manifest, manifest.records[0], 3, 16, "eval_equidistant")
        assert len(clips) == 3
        for clip in clips:
            np.testing.assert_array_equal(clip.tokens, tokens)

    def test_equidistant_is_seed_independent(self, small_dataset):
        manifest, _ = small_dataset
        record = self._record(manifest)
        a = sample_clips(manifest, record, 3, 16, "eval_equidistant", seed=1)
        b = sample_clips(manifest, record, 3, 16, "eval_equidistant", seed=999)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.tokens, y.tokens)

    def test_train_random_reproducible(self, small_dataset):
        manifest, _ = small_dataset
        record = self._record(manifest)
        a = sample_clips(manifest, record, 2, 16, "train_random", seed=42)
        b = sample_clips(manifest, record, 2, 16, "train_random", seed=42)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.tokens, y.tokens)

    def test_train_random_windows_are_contiguous(self, small_dataset):
        manifest, _ = small_dataset
        record = self._record(manifest)
        tokens, _ = read_embedding_file(manifest.resolve(record))
        for clip in sample_clips(manifest, record, 5, 16, "train_random", seed=7):
            starts = [
                s for s in range(24 - 16 + 1)
                if np.array_equal(clip.tokens, tokens[s : s + 16])
            ]
            assert starts, "clip is not a contiguous window"

    def test_strided_mode_covers_video(self, small_dataset):
        manifest, _ = small_dataset
        record = self._record(manifest)
        clip = sample_clips(manifest, record, 1, 8, "train_random_strided", seed=0)[0]
        assert clip.tokens.shape[0] == 8


class TestSelectTokens:
    def _clip(self, cls_index):
        rng = np.random.default_rng(4)
        return TokenClip(
            tokens=rng.normal(size=(2, 3, 4)).astype(np.float32),
            cls_index=cls_index, video_id="v", view="w", class_id=0,
        )

    def test_cls_slice(self):
        clip = self._clip(0)
        out = select_tokens(clip, "cls")
        assert out.shape == (2, 1, 4)
        np.testing.assert_array_equal(out[:, 0, :], clip.tokens[:, 0, :])

    def test_all_is_identity(self):
        clip = self._clip(1)
        assert select_tokens(clip, "all") is clip.tokens

    def test_no_cls_error(self):
        clip = self._clip(None)
        with pytest.raises(MissingCLSError):
            select_tokens(clip, "cls")
