"""FPCK parameter checkpoints.

Same container conventions as the embedding files (little-endian, magic +
version header) under the magic ``FPCK``: a JSON metadata block (configs,
class list, trained view, named parameter table) followed by the raw
float32 payloads in table order.

    offset  size  field
    0       4     magic b"FPCK"
    4       2     format version (currently 1)
    6       4     metadata length M (UTF-8 JSON)
    10      M     metadata
    10+M    ...   parameter payloads, float32 little-endian, table order

Serialization is canonical (sorted keys, no timestamps), so identical
models produce byte-identical files.
"""

import json
import struct

import numpy as np

from .heads import FusionHead, FusionHeadConfig
from .probe import ProbeModel
from .store import StoreError

MAGIC = b"FPCK"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sHI")


def _param_table(params):
    table = []
    for name, tensor in params.items():
        table.append({"name": name, "shape": list(tensor.data.shape)})
    return table


def save_checkpoint(path, head, probe, classes, trained_view, train_cfg=None, extra=None):
    """Write head + probe parameters and their configs as one FPCK file."""
    meta = {
        "head_config": head.cfg.to_dict(),
        "probe": {
            "feature_dim": probe.feature_dim,
            "class_count": probe.class_count,
            "relu_variant": probe.relu_variant,
        },
        "classes": list(classes),
        "trained_view": trained_view,
        "train_config": dict(train_cfg) if train_cfg else None,
        "extra": extra or {},
        "head_params": _param_table(head.params),
        "probe_params": _param_table(probe.params),
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for params in (head.params, probe.params):
            for tensor in params.values():
                fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


class Checkpoint:
    def __init__(self, head, probe, classes, trained_view, train_cfg, extra):
        self.head = head
        self.probe = probe
        self.classes = classes
        self.trained_view = trained_view
        self.train_cfg = train_cfg
        self.extra = extra

    @property
    def head_cfg(self):
        return self.head.cfg


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read(_HEAD.size)
        if len(raw) < _HEAD.size:
            raise StoreError(f"{path}: truncated checkpoint", code="BAD_FILE")
        magic, version, meta_len = _HEAD.unpack(raw)
        if magic != MAGIC:
            raise StoreError(f"{path}: bad magic {magic!r}", code="BAD_FILE")
        if version != FORMAT_VERSION:
            raise StoreError(f"{path}: unsupported version {version}", code="BAD_FILE")
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        payload = fh.read()

    head_cfg = FusionHeadConfig.from_dict(meta["head_config"])
    head = FusionHead(head_cfg)
    probe = ProbeModel(
        feature_dim=meta["probe"]["feature_dim"],
        class_count=meta["probe"]["class_count"],
        relu_variant=meta["probe"]["relu_variant"],
        seed=head_cfg.seed,
    )
    offset = 0
    for params, table in ((head.params, meta["head_params"]), (probe.params, meta["probe_params"])):
        for entry in table:
            name, shape = entry["name"], tuple(entry["shape"])
            if name not in params or tuple(params[name].data.shape) != shape:
                raise StoreError(f"{path}: parameter {name} {shape} does not match the config")
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * 4
            chunk = payload[offset : offset + nbytes]
            if len(chunk) != nbytes:
                raise StoreError(f"{path}: truncated payload at {name}", code="BAD_FILE")
            params[name].data = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
            offset += nbytes
    if offset != len(payload):
        raise StoreError(f"{path}: {len(payload) - offset} trailing payload bytes", code="BAD_FILE")
    return Checkpoint(
        head=head,
        probe=probe,
        classes=meta["classes"],
        trained_view=meta["trained_view"],
        train_cfg=meta["train_config"],
        extra=meta.get("extra", {}),
    )
