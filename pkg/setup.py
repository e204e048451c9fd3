"""Build script: compiles the optional Cython speedup module.

The extension is marked optional, so environments without a C compiler
(or without Cython) still get a working pure-Python install; the package
falls back to the numpy implementations at import time.
"""
import os

from setuptools import Extension, setup

PYX = os.path.join("src", "netgps", "_speedups.pyx")

ext_modules = []
try:
    if not os.path.exists(PYX):
        raise ImportError
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "netgps._speedups",
        sources=[PYX],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
        optional=True,
    )
    ext_modules = cythonize([ext], language_level=3)
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
