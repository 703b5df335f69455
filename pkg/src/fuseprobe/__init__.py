"""fuseprobe: temporal fusion and linear probing over frozen frame embeddings.

Subsystems:

* :mod:`fuseprobe.autodiff` — reverse-mode autodiff tensor core
* :mod:`fuseprobe.store` — embedding file format, manifests, clip sampling
* :mod:`fuseprobe.heads` — the 13 temporal fusion heads
* :mod:`fuseprobe.probe` — linear probe and cross-entropy objective
* :mod:`fuseprobe.trainer` — AdamW + cosine schedule training loop
* :mod:`fuseprobe.evaluator` — multi-clip, multi-view evaluation protocol
* :mod:`fuseprobe.synth` — synthetic benchmark generator and oracle bands
* :mod:`fuseprobe.cli` — command-line interface

Numeric kernels run on a compiled Cython core when built, with a NumPy
fallback (see :mod:`fuseprobe.backend`).
"""

from .backend import BACKEND, available_backends

__version__ = "0.1.0"

__all__ = ["BACKEND", "available_backends", "__version__"]
