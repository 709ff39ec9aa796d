"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a pure numpy/python fallback is
selected at import time), so any build failure here downgrades to a
source-only install instead of aborting.
"""
import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/minkprob/_kernels.pyx",
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
    include_dirs = [numpy.get_include()]
except Exception as exc:  # pragma: no cover
    sys.stderr.write(f"minkprob: skipping compiled kernels ({exc})\n")
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
