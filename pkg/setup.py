"""Build script for the compiled kernel extension.

The pure-Python package works without the extension (a numpy fallback is
selected at import time); building it just makes the conv/pool hot loops
faster for small batches.
"""
import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "ambclab.kernels._compiled",
        ["src/ambclab/kernels/_compiled.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
