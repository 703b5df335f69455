"""Build script for the optional compiled kernel core.

The package is fully functional without the extension (a NumPy fallback is
selected at import time), so the build is marked optional and install
proceeds even when no C toolchain is available.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "fuseprobe._kernels",
                ["src/fuseprobe/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
