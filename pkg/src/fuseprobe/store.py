"""On-disk embedding store: binary token files, dataset manifests, sampling.

Embedding file layout (little-endian, 20-byte header, magic ``FPEB``):

    offset  size  field
    0       4     magic b"FPEB"
    4       2     format version (currently 1)
    6       2     dtype code (0 = float32 little-endian)
    8       4     F_total  frames in the file
    12      2     N        tokens per frame
    14      4     D        embedding dimension
    18      2     cls_index, or 0xFFFF when the backbone has no CLS token
    20      ...   payload: F_total * N * D float32 values, frame-major

Parameter checkpoints reuse the same container conventions under the magic
``FPCK`` (see :mod:`fuseprobe.checkpoint`).

The manifest is a UTF-8 JSON document listing classes, views, and one
record per video; embedding paths are resolved relative to the manifest's
directory. Loaders are read-only after open and safe for concurrent reads.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"FPEB"
FORMAT_VERSION = 1
DTYPE_F32 = 0
CLS_NONE = 0xFFFF

_HEADER = struct.Struct("<4sHHIHIH")  # magic, version, dtype, F, N, D, cls


class StoreError(Exception):
    """Base error for embedding-store problems; carries a short code."""

    code = "STORE_ERROR"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class MissingCLSError(StoreError):
    code = "NO_CLS"


class ManifestValidationError(StoreError):
    """Raised when a manifest violates its invariants.

    ``problems`` is a list of (code, message) pairs; codes are stable:
    MISSING_FILE, HEADER_MISMATCH, OVERLAPPING_SPLITS, UNKNOWN_VIEW,
    BAD_CLASS_ID, BAD_SPLIT, BAD_FILE.
    """

    code = "INVALID_MANIFEST"

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"{code}: {msg}" for code, msg in self.problems)
        super().__init__(f"{len(self.problems)} manifest problem(s): {lines}")


def write_embedding_file(path, tokens, cls_index=None):
    """Write a [F, N, D] float array as an FPEB file (bit-exact round-trip)."""
    arr = np.ascontiguousarray(tokens, dtype="<f4")
    if arr.ndim != 3:
        raise StoreError(f"token array must be [F, N, D], got shape {arr.shape}")
    f_total, n, d = arr.shape
    cls = CLS_NONE if cls_index is None else int(cls_index)
    if cls != CLS_NONE and not 0 <= cls < n:
        raise StoreError(f"cls_index {cls} out of range for N={n}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_F32, f_total, n, d, cls))
        fh.write(arr.tobytes())


def read_embedding_header(path):
    """Return (F_total, N, D, cls_index or None) without loading the payload."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise StoreError(f"{path}: truncated header", code="BAD_FILE")
    magic, version, dtype, f_total, n, d, cls = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise StoreError(f"{path}: bad magic {magic!r}", code="BAD_FILE")
    if version != FORMAT_VERSION:
        raise StoreError(f"{path}: unsupported version {version}", code="BAD_FILE")
    if dtype != DTYPE_F32:
        raise StoreError(f"{path}: unsupported dtype code {dtype}", code="BAD_FILE")
    return f_total, n, d, (None if cls == CLS_NONE else cls)


def read_embedding_file(path):
    """Return (tokens [F, N, D] float32, cls_index or None)."""
    f_total, n, d, cls = read_embedding_header(path)
    expected = f_total * n * d * 4
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        payload = fh.read()
    if len(payload) != expected:
        raise StoreError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}",
            code="BAD_FILE",
        )
    tokens = np.frombuffer(payload, dtype="<f4").reshape(f_total, n, d)
    return tokens, cls


@dataclass
class VideoRecord:
    video_id: str
    view: str
    class_id: int
    split: str
    path: str  # relative to the manifest directory
    frames: int


@dataclass
class Manifest:
    dataset: str
    classes: list
    views: list
    records: list
    is_clip_level: bool = False
    root: str = "."  # directory the record paths resolve against

    def resolve(self, record):
        return os.path.join(self.root, record.path)

    def split_records(self, split):
        return [r for r in self.records if r.split == split]

    def view_records(self, view, split=None):
        return [
            r for r in self.records if r.view == view and (split is None or r.split == split)
        ]

    def to_dict(self):
        return {
            "dataset": self.dataset,
            "classes": list(self.classes),
            "views": list(self.views),
            "is_clip_level": self.is_clip_level,
            "records": [
                {
                    "video_id": r.video_id,
                    "view": r.view,
                    "class_id": r.class_id,
                    "split": r.split,
                    "path": r.path,
                    "frames": r.frames,
                }
                for r in self.records
            ],
        }


def save_manifest(manifest, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    records = [
        VideoRecord(
            video_id=r["video_id"],
            view=r["view"],
            class_id=int(r["class_id"]),
            split=r["split"],
            path=r["path"],
            frames=int(r["frames"]),
        )
        for r in doc["records"]
    ]
    return Manifest(
        dataset=doc["dataset"],
        classes=list(doc["classes"]),
        views=list(doc["views"]),
        records=records,
        is_clip_level=bool(doc.get("is_clip_level", False)),
        root=os.path.dirname(os.path.abspath(path)),
    )


@dataclass
class ValidationReport:
    """Per-view and per-class record counts plus shared geometry."""

    dataset: str
    record_count: int
    tokens_per_frame: int
    dim: int
    view_counts: dict = field(default_factory=dict)
    class_counts: dict = field(default_factory=dict)
    split_counts: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "dataset": self.dataset,
            "record_count": self.record_count,
            "tokens_per_frame": self.tokens_per_frame,
            "dim": self.dim,
            "view_counts": dict(self.view_counts),
            "class_counts": dict(self.class_counts),
            "split_counts": dict(self.split_counts),
        }


_SPLITS = ("train", "val", "test")


def validate_manifest(manifest):
    """Check every manifest invariant; return a count report or raise.

    All problems are collected before raising so a single run surfaces the
    full damage. Distinct codes per failure mode, see
    :class:`ManifestValidationError`.
    """
    problems = []
    shared_n = shared_d = None
    seen_splits = {}
    view_counts = {v: 0 for v in manifest.views}
    class_counts = {}
    split_counts = {s: 0 for s in _SPLITS}

    for record in manifest.records:
        if record.view not in manifest.views:
            problems.append(("UNKNOWN_VIEW", f"{record.video_id}: view {record.view!r}"))
        else:
            view_counts[record.view] += 1
        if not 0 <= record.class_id < len(manifest.classes):
            problems.append(("BAD_CLASS_ID", f"{record.video_id}: class_id {record.class_id}"))
        else:
            class_counts[record.class_id] = class_counts.get(record.class_id, 0) + 1
        if record.split not in _SPLITS:
            problems.append(("BAD_SPLIT", f"{record.video_id}: split {record.split!r}"))
        else:
            split_counts[record.split] += 1
            prior = seen_splits.setdefault(record.video_id, record.split)
            if prior != record.split:
                problems.append(
                    ("OVERLAPPING_SPLITS", f"{record.video_id}: in both {prior} and {record.split}")
                )

        path = manifest.resolve(record)
        if not os.path.isfile(path):
            problems.append(("MISSING_FILE", path))
            continue
        try:
            f_total, n, d, _cls = read_embedding_header(path)
        except StoreError as exc:
            problems.append((exc.code, str(exc)))
            continue
        size = os.path.getsize(path)
        expected = _HEADER.size + f_total * n * d * 4
        if size != expected:
            problems.append(
                ("HEADER_MISMATCH", f"{path}: size {size} != header-implied {expected}")
            )
        if f_total != record.frames:
            problems.append(
                ("HEADER_MISMATCH", f"{path}: F_total {f_total} != manifest frames {record.frames}")
            )
        if shared_n is None:
            shared_n, shared_d = n, d
        elif (n, d) != (shared_n, shared_d):
            problems.append(
                ("HEADER_MISMATCH", f"{path}: N,D ({n},{d}) != shared ({shared_n},{shared_d})")
            )

    if problems:
        raise ManifestValidationError(problems)
    return ValidationReport(
        dataset=manifest.dataset,
        record_count=len(manifest.records),
        tokens_per_frame=shared_n or 0,
        dim=shared_d or 0,
        view_counts=view_counts,
        class_counts=class_counts,
        split_counts=split_counts,
    )


@dataclass
class TokenClip:
    """One sampled clip: tokens [T, N, D] plus labels and CLS location."""

    tokens: np.ndarray
    cls_index: object  # int or None
    video_id: str
    view: str
    class_id: int
    is_clip_level: bool = False


def _clip_starts(f_total, num_clips, frames_per_clip, mode, rng):
    span = max(f_total - frames_per_clip, 0)
    if mode == "train_random":
        return [int(rng.integers(0, span + 1)) for _ in range(num_clips)]
    if mode == "eval_equidistant":
        if num_clips == 1:
            return [span // 2]
        return [round(i * span / (num_clips - 1)) for i in range(num_clips)]
    raise ValueError(f"unknown sampling mode {mode!r}")


def sample_clips(manifest, record, num_clips, frames_per_clip, mode, seed=0):
    """Cut ``num_clips`` windows of ``frames_per_clip`` frames from a video.

    ``train_random`` draws uniformly-random contiguous windows (stride 1);
    ``eval_equidistant`` spaces window starts evenly over the valid range
    and is deterministic regardless of seed; ``train_random_strided``
    spreads ``frames_per_clip`` random-phase strided indices over the whole
    video instead of a contiguous window. Videos shorter than a window are
    loop-padded (frame indices wrap modulo F_total).
    """
    if record.frames == 0:
        raise StoreError(f"{record.video_id}: empty video")
    tokens, cls = read_embedding_file(manifest.resolve(record))
    f_total = tokens.shape[0]
    rng = np.random.default_rng(seed)
    clips = []
    if mode == "train_random_strided":
        stride = max(f_total // frames_per_clip, 1)
        for _ in range(num_clips):
            phase = int(rng.integers(0, stride))
            idx = (phase + stride * np.arange(frames_per_clip)) % f_total
            clips.append(idx)
    else:
        for start in _clip_starts(f_total, num_clips, frames_per_clip, mode, rng):
            idx = (start + np.arange(frames_per_clip)) % f_total
            clips.append(idx)
    return [
        TokenClip(
            tokens=np.ascontiguousarray(tokens[idx]),
            cls_index=cls,
            video_id=record.video_id,
            view=record.view,
            class_id=record.class_id,
            is_clip_level=manifest.is_clip_level,
        )
        for idx in clips
    ]


def select_tokens(clip, mode):
    """Return the [T, N, D] token block (``all``) or the CLS slice (``cls``)."""
    if mode == "all":
        return clip.tokens
    if mode == "cls":
        if clip.cls_index is None:
            raise MissingCLSError(
                f"{clip.video_id}: CLS tokens requested but the backbone emitted none"
            )
        return clip.tokens[:, clip.cls_index : clip.cls_index + 1, :]
    raise ValueError(f"unknown token mode {mode!r}")
