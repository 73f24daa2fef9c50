import os
import sys

import numpy as np
from setuptools import Extension, setup


def extensions():
    if os.environ.get("QUATPGO_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("Cython not found; installing the pure-Python backend only", file=sys.stderr)
        return []
    omp = [] if sys.platform == "darwin" else ["-fopenmp"]
    ext = Extension(
        "quatpgo._ckernels",
        ["src/quatpgo/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"] + omp,
        extra_link_args=omp,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": 3})


setup(ext_modules=extensions())
