"""Build script for the optional compiled convolution core.

The package is fully functional without the extension (a pure-numpy
fallback is selected at import time); the extension accelerates the
im2col/col2im packing loops that dominate conv training time on CPU.
"""
import sys

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:  # pure-python install without build toolchain
    numpy = None
    cythonize = None


def extensions():
    if cythonize is None:
        return []
    ext = Extension(
        "lapsegen._convcore",
        ["src/lapsegen/_convcore.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


try:
    setup(ext_modules=extensions())
except SystemExit:
    raise
except Exception as exc:  # compiler missing: install without the fast core
    sys.stderr.write(f"warning: compiled core skipped ({exc}); "
                     "falling back to pure-numpy kernels\n")
    setup(ext_modules=[])
