# Builds the compiled kernels; the package falls back to pure Python when the
# extension is missing (LODLOC_BACKEND=python forces the fallback).
import os
import sys

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

openmp = [] if sys.platform == "darwin" or os.environ.get("LODLOC_NO_OPENMP") else ["-fopenmp"]

extensions = [
    Extension(
        "lodloc._core",
        ["src/lodloc/_core.pyx"],
        include_dirs=[np.get_include()],
        # no fast-math / contraction: results must match the numpy fallback bit for bit
        extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"] + openmp,
        extra_link_args=openmp,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
