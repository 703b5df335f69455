"""Writers for the fuseprobe on-disk interfaces.

Independent implementation of the documented formats (not an import of the
engine), so the integration test exercises a true cross-implementation
round-trip.

FPEB embedding file, little-endian, 20-byte header:

    magic "FPEB" | version u16 = 1 | dtype u16 = 0 (f32le)
    | F_total u32 | N u16 | D u32 | cls_index u16 (0xFFFF = none)
    | payload F_total*N*D float32, frame-major

Manifest: UTF-8 JSON with dataset, classes, views, is_clip_level, and one
record per video {video_id, view, class_id, split, path, frames}; paths
are relative to the manifest's directory.
"""

import json
import struct

import numpy as np

MAGIC = b"FPEB"
VERSION = 1
DTYPE_F32 = 0
CLS_NONE = 0xFFFF

_HEADER = struct.Struct("<4sHHIHIH")


def write_embedding_file(path, tokens, cls_index=None):
    arr = np.ascontiguousarray(tokens, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError(f"token array must be [F, N, D], got {arr.shape}")
    f_total, n, d = arr.shape
    cls = CLS_NONE if cls_index is None else int(cls_index)
    if cls != CLS_NONE and not 0 <= cls < n:
        raise ValueError(f"cls_index {cls} out of range for N={n}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, DTYPE_F32, f_total, n, d, cls))
        fh.write(arr.tobytes())


def write_manifest(path, dataset, classes, views, records, is_clip_level):
    doc = {
        "dataset": dataset,
        "classes": list(classes),
        "views": list(views),
        "is_clip_level": bool(is_clip_level),
        "records": records,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
