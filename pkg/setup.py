"""Builds the optional Cython convolution kernels.

The package works without the extension (a numpy fallback is selected at
import time); compile in-place for the fast path:

    python3 setup.py build_ext --inplace
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "a2d.autodiff.kernels.conv_cy",
                sources=["src/a2d/autodiff/kernels/conv_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    # No Cython at build time: install pure-Python only.
    pass

setup(ext_modules=ext_modules)
