"""Extraction driver: frozen backbone -> FPEB files + manifest.

The backbone decides the geometry (N, D, cls_index, is_clip_level) and it
is written consistently into every file. Frame-level backbones embed every
retained frame of the video so the probing engine can sample clips; clip-
level backbones embed one token set per video. Videos that fail to decode
are skipped and logged; the run aborts only on backbone-level mismatches.
"""

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import backbones, formats, video

logger = logging.getLogger("fpextract")


@dataclass
class VideoItem:
    path: str
    video_id: str
    view: str
    class_name: str
    split: str = "test"


@dataclass
class ExtractSpec:
    backbone: str
    output_dir: str
    videos: list
    classes: list = field(default_factory=list)
    views: list = field(default_factory=list)
    dataset: str = "extracted"
    emit_all_tokens: bool = True
    crop: int = 224
    crop_mode_train: str = "random"  # eval splits always center-crop
    frame_stride: int = 1
    seed: int = 0

    @classmethod
    def from_dict(cls, doc):
        videos = [VideoItem(**v) for v in doc.pop("videos")]
        return cls(videos=videos, **doc)


def _resolve_labels(spec):
    classes = list(spec.classes) or sorted({v.class_name for v in spec.videos})
    views = list(spec.views) or sorted({v.view for v in spec.videos})
    class_ids = {name: i for i, name in enumerate(classes)}
    for item in spec.videos:
        if item.class_name not in class_ids:
            raise ValueError(f"{item.video_id}: class {item.class_name!r} not in class list")
        if item.view not in views:
            raise ValueError(f"{item.video_id}: view {item.view!r} not in view list")
    return classes, views, class_ids


def extract(spec):
    """Run the extraction; returns (manifest_path, records, skipped)."""
    model = backbones.build(spec.backbone, emit_all_tokens=spec.emit_all_tokens, seed=spec.seed)
    classes, views, class_ids = _resolve_labels(spec)
    emb_dir = os.path.join(spec.output_dir, "embeddings")
    os.makedirs(emb_dir, exist_ok=True)

    records = []
    skipped = []
    expected_geometry = None
    for index, item in enumerate(spec.videos):
        try:
            frames = video.load_frames(item.path)
        except video.DecodeError as exc:
            logger.warning("skipping %s: %s", item.video_id, exc)
            skipped.append((item.video_id, str(exc)))
            continue
        frames = frames[:: spec.frame_stride]
        crop_mode = "center"
        rng = None
        if item.split == "train" and spec.crop_mode_train == "random":
            crop_mode = "random"
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
        clip = video.preprocess(frames, crop=spec.crop, mode=crop_mode, rng=rng)

        if model.is_clip_level:
            tokens = model.embed_clip(clip)
        else:
            tokens = model.embed_frames(clip)
        geometry = (tokens.shape[1], tokens.shape[2], model.cls_index, model.is_clip_level)
        if expected_geometry is None:
            expected_geometry = geometry
        elif geometry != expected_geometry:
            raise backbones.BackboneError(
                f"{item.video_id}: backbone geometry changed mid-run: "
                f"{geometry} != {expected_geometry}"
            )
        rel = os.path.join("embeddings", f"{item.video_id}.fpeb")
        formats.write_embedding_file(
            os.path.join(spec.output_dir, rel), tokens, cls_index=model.cls_index
        )
        records.append({
            "video_id": item.video_id,
            "view": item.view,
            "class_id": class_ids[item.class_name],
            "split": item.split,
            "path": rel,
            "frames": int(tokens.shape[0]),
        })

    if not records:
        raise ValueError("no videos could be decoded")
    manifest_path = os.path.join(spec.output_dir, "manifest.json")
    formats.write_manifest(
        manifest_path, spec.dataset, classes, views, records,
        is_clip_level=model.is_clip_level,
    )
    return manifest_path, records, skipped
