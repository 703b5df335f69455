"""Frozen backbone registry.

Every backbone declares its token geometry (N, D, cls_index) and pathway
(frame-level vs clip-level) and exposes one of:

* ``embed_frames(frames) -> [F, N, D]`` for frame-level models, where the
  engine's temporal fusion runs downstream, or
* ``embed_clip(frames) -> [1, N, D]`` for clip-level video models, stored
  with ``is_clip_level`` so the engine bypasses fusion.

The four pretrained models (CLIP, DinoV2 as frame-level; X-CLIP, VideoMAE
as clip-level) load lazily through torch + transformers and are never
updated: everything runs under ``no_grad`` in eval mode. The ``toy`` /
``toyclip`` reference backbones are deterministic seeded projections with
no heavyweight dependencies; they exist so the full extraction pipeline
and its file contracts can be exercised on any machine.
"""

import numpy as np

from .video import sample_frame_indices


class BackboneError(Exception):
    pass


class ToyBackbone:
    """Deterministic frozen feature extractor standing in for a ViT.

    Splits the crop into a 4x4 patch grid; each patch's downsampled
    grayscale block passes through a fixed seeded projection. Token 0 is a
    CLS-style summary (mean of patch tokens through a second projection).
    Repeated extraction of the same frame is bit-identical.
    """

    name = "toy"
    grid = 4
    block = 16  # each patch downsamples to block x block grayscale
    dim = 64
    is_clip_level = False
    cls_index = 0

    def __init__(self, seed=0):
        rng = np.random.default_rng(np.random.SeedSequence([0xF0E, seed]))
        flat = self.block * self.block
        self.proj = rng.normal(0.0, 1.0 / np.sqrt(flat), size=(flat, self.dim)).astype(np.float32)
        self.cls_proj = rng.normal(0.0, 1.0 / np.sqrt(self.dim), size=(self.dim, self.dim)).astype(np.float32)

    @property
    def tokens_per_frame(self):
        return 1 + self.grid * self.grid

    def _frame_tokens(self, frame):
        gray = frame.mean(axis=-1)  # [crop, crop] in [0, 1]
        crop = gray.shape[0]
        patch = crop // self.grid
        step = patch // self.block
        tokens = []
        for gy in range(self.grid):
            for gx in range(self.grid):
                block = gray[gy * patch : (gy + 1) * patch : step, gx * patch : (gx + 1) * patch : step]
                block = block[: self.block, : self.block]
                tokens.append(block.reshape(-1) @ self.proj)
        patches = np.stack(tokens)
        cls = patches.mean(axis=0) @ self.cls_proj
        return np.concatenate([cls[None, :], patches], axis=0)

    def embed_frames(self, frames):
        return np.stack([self._frame_tokens(f) for f in frames]).astype(np.float32)


class ToyClipBackbone(ToyBackbone):
    """Clip-level twin of the toy backbone: one token set per 16-frame clip."""

    name = "toyclip"
    is_clip_level = True
    frames_per_clip = 16

    def embed_clip(self, frames):
        idx = sample_frame_indices(frames.shape[0], self.frames_per_clip)
        per_frame = self.embed_frames(frames[idx])
        return per_frame.mean(axis=0, keepdims=True).astype(np.float32)


def _require_torch(name):
    try:
        import torch  # noqa: F401
        import transformers  # noqa: F401
    except ImportError as exc:
        raise BackboneError(
            f"backbone {name!r} needs torch and transformers "
            "(pip install 'fpextract[backbones]'); use 'toy'/'toyclip' for a "
            "dependency-free pipeline check"
        ) from exc


class _HFFrameBackbone:
    """Frame-level vision transformer via transformers."""

    is_clip_level = False
    cls_index = 0

    def __init__(self, checkpoint, name):
        _require_torch(name)
        import torch
        from transformers import AutoImageProcessor, AutoModel

        self.name = name
        self.torch = torch
        self.processor = AutoImageProcessor.from_pretrained(checkpoint)
        self.model = AutoModel.from_pretrained(checkpoint)
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.dim = self.model.config.hidden_size

    def embed_frames(self, frames):
        torch = self.torch
        images = [(f * 255).astype(np.uint8) for f in frames]
        inputs = self.processor(images=images, return_tensors="pt")
        with torch.no_grad():
            out = self.model(**inputs)
        tokens = out.last_hidden_state  # [F, N, D], token 0 is CLS
        return tokens.cpu().numpy().astype(np.float32)


class ClipBackbone(_HFFrameBackbone):
    def __init__(self):
        super().__init__("openai/clip-vit-base-patch32", "clip")


class DinoV2Backbone(_HFFrameBackbone):
    def __init__(self):
        super().__init__("facebook/dinov2-base", "dinov2")


class XClipBackbone:
    """Clip-level video-text model; emits the pooled video embedding."""

    name = "xclip"
    is_clip_level = True
    cls_index = None

    def __init__(self):
        _require_torch("xclip")
        import torch
        from transformers import AutoProcessor, XCLIPVisionModel

        self.torch = torch
        self.processor = AutoProcessor.from_pretrained("microsoft/xclip-base-patch32")
        self.model = XCLIPVisionModel.from_pretrained("microsoft/xclip-base-patch32")
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.frames_per_clip = 8
        self.dim = self.model.config.hidden_size

    def embed_clip(self, frames):
        torch = self.torch
        idx = sample_frame_indices(frames.shape[0], self.frames_per_clip)
        images = [(frames[i] * 255).astype(np.uint8) for i in idx]
        inputs = self.processor(images=images, return_tensors="pt")
        with torch.no_grad():
            out = self.model(pixel_values=inputs["pixel_values"])
        pooled = out.pooler_output.mean(dim=0, keepdim=True)  # [1, D]
        return pooled[None, :, :].cpu().numpy().astype(np.float32)


class VideoMAEBackbone:
    name = "videomae"
    is_clip_level = True
    cls_index = None
    frames_per_clip = 16

    def __init__(self, emit_all_tokens=False):
        _require_torch("videomae")
        import torch
        from transformers import AutoImageProcessor, VideoMAEModel

        self.torch = torch
        self.processor = AutoImageProcessor.from_pretrained("MCG-NJU/videomae-base")
        self.model = VideoMAEModel.from_pretrained("MCG-NJU/videomae-base")
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.emit_all_tokens = emit_all_tokens
        self.dim = self.model.config.hidden_size

    def embed_clip(self, frames):
        torch = self.torch
        idx = sample_frame_indices(frames.shape[0], self.frames_per_clip)
        video = [(frames[i] * 255).astype(np.uint8) for i in idx]
        inputs = self.processor(video, return_tensors="pt")
        with torch.no_grad():
            out = self.model(**inputs)
        tokens = out.last_hidden_state[0]  # [tokens, D], no CLS
        if not self.emit_all_tokens:
            tokens = tokens.mean(dim=0, keepdim=True)
        return tokens[None, :, :].cpu().numpy().astype(np.float32)


_REGISTRY = {
    "toy": ToyBackbone,
    "toyclip": ToyClipBackbone,
    "clip": ClipBackbone,
    "dinov2": DinoV2Backbone,
    "xclip": XClipBackbone,
    "videomae": VideoMAEBackbone,
}


def available():
    return sorted(_REGISTRY)


def build(name, emit_all_tokens=True, seed=0):
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise BackboneError(f"unknown backbone {name!r}; choose from {available()}") from None
    if name in ("toy", "toyclip"):
        return factory(seed=seed)
    if name == "videomae":
        return factory(emit_all_tokens=emit_all_tokens)
    return factory()
