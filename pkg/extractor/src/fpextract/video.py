"""Frame loading and preprocessing.

Supported video sources:

* a directory of image files (frames in sorted filename order),
* a ``.npy`` stack shaped [F, H, W, 3] uint8,
* ``pattern:<seed>x<frames>`` pseudo-paths generating a deterministic
  moving test pattern (used by the tests and for smoke runs).

Container formats that need a system decoder (mp4 etc.) are not decoded
here; such records are skipped and logged by the driver.

Preprocessing follows the probing recipe: frames are resized so the short
side matches the crop, then center-cropped (evaluation) or random-cropped
(training data, seeded) to ``crop x crop`` RGB.
"""

import os
import re

import numpy as np
from PIL import Image

_IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}
_PATTERN = re.compile(r"^pattern:(\d+)x(\d+)$")


class DecodeError(Exception):
    pass


def _pattern_frames(seed, count, size=256):
    """Deterministic moving blob + class-free texture, uint8 RGB."""
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 40, size=(size, size, 3), dtype=np.uint8)
    ys, xs = np.mgrid[0:size, 0:size]
    frames = []
    for t in range(count):
        cx = (size // 4 + t * 7) % size
        cy = (size // 2 + t * 3) % size
        blob = np.exp(-(((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * (size / 12) ** 2)))
        frame = base.astype(np.float64) + 180.0 * blob[..., None]
        frames.append(np.clip(frame, 0, 255).astype(np.uint8))
    return np.stack(frames)


def load_frames(path):
    """Return [F, H, W, 3] uint8 frames for a video source."""
    match = _PATTERN.match(str(path))
    if match:
        return _pattern_frames(int(match.group(1)), int(match.group(2)))
    if os.path.isdir(path):
        names = sorted(
            f for f in os.listdir(path) if os.path.splitext(f)[1].lower() in _IMAGE_EXTS
        )
        if not names:
            raise DecodeError(f"{path}: no image frames found")
        frames = []
        for name in names:
            with Image.open(os.path.join(path, name)) as img:
                frames.append(np.asarray(img.convert("RGB"), dtype=np.uint8))
        shapes = {f.shape for f in frames}
        if len(shapes) != 1:
            raise DecodeError(f"{path}: frames disagree on size: {shapes}")
        return np.stack(frames)
    if str(path).endswith(".npy"):
        arr = np.load(path)
        if arr.ndim != 4 or arr.shape[-1] != 3:
            raise DecodeError(f"{path}: expected [F, H, W, 3], got {arr.shape}")
        return arr.astype(np.uint8)
    raise DecodeError(f"{path}: unsupported video source (no system decoder bundled)")


def sample_frame_indices(f_total, count):
    """``count`` equidistant frame indices covering the whole video."""
    if f_total < 1:
        raise DecodeError("empty video")
    if count == 1:
        return np.array([f_total // 2])
    pos = np.linspace(0, f_total - 1, count)
    return np.round(pos).astype(np.int64)


def _resize_short_side(frame, target):
    h, w = frame.shape[:2]
    scale = target / min(h, w)
    new_w = max(int(round(w * scale)), target)
    new_h = max(int(round(h * scale)), target)
    img = Image.fromarray(frame).resize((new_w, new_h), Image.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


def crop_frame(frame, crop, mode="center", rng=None):
    """Resize to the crop scale, then cut a crop x crop window."""
    frame = _resize_short_side(frame, crop)
    h, w = frame.shape[:2]
    if mode == "center":
        top, left = (h - crop) // 2, (w - crop) // 2
    elif mode == "random":
        if rng is None:
            raise ValueError("random crop needs an rng")
        top = int(rng.integers(0, h - crop + 1))
        left = int(rng.integers(0, w - crop + 1))
    else:
        raise ValueError(f"unknown crop mode {mode!r}")
    return frame[top : top + crop, left : left + crop]


def preprocess(frames, crop=224, mode="center", rng=None):
    """[F, H, W, 3] uint8 -> [F, crop, crop, 3] float32 in [0, 1]."""
    out = np.stack([crop_frame(f, crop, mode, rng) for f in frames])
    return out.astype(np.float32) / 255.0
