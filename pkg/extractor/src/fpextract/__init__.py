"""fpextract: frozen-backbone embedding extraction for the fuseprobe engine.

Loads pretrained vision backbones (CLIP and DinoV2 frame-level; X-CLIP and
VideoMAE clip-level), applies the probing preprocessing (equidistant frame
retention, 224x224 crops), and writes the engine's FPEB embedding files
plus a dataset manifest. Deterministic ``toy``/``toyclip`` reference
backbones cover the pipeline without the torch stack.
"""

__version__ = "0.1.0"
