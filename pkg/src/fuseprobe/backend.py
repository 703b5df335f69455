"""Kernel backend selection.

The numeric kernels exist twice: a compiled Cython core (``_kernels``) built
at install time, and a NumPy fallback (``_kernels_py``) with identical
signatures. The compiled core is preferred when importable; set
``FUSEPROBE_BACKEND=numpy`` or ``FUSEPROBE_BACKEND=compiled`` to force one.
``benchmarks/bench_backend.py`` compares the two.
"""

import os

from . import _kernels_py

try:
    from . import _kernels
except ImportError:
    _kernels = None

_FORCED = os.environ.get("FUSEPROBE_BACKEND", "").strip().lower()


def available_backends():
    names = ["numpy"]
    if _kernels is not None:
        names.insert(0, "compiled")
    return names


def _select():
    if _FORCED == "numpy":
        return _kernels_py, "numpy"
    if _FORCED == "compiled":
        if _kernels is None:
            raise ImportError(
                "FUSEPROBE_BACKEND=compiled but the fuseprobe._kernels "
                "extension is not built; reinstall with a C toolchain"
            )
        return _kernels, "compiled"
    if _kernels is not None:
        return _kernels, "compiled"
    return _kernels_py, "numpy"


K, BACKEND = _select()


def get_kernels(name):
    """Return a kernel module by name, independent of the active selection."""
    if name == "numpy":
        return _kernels_py
    if name == "compiled":
        if _kernels is None:
            raise ImportError("compiled kernels are not available")
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
