import os

import numpy
from setuptools import Extension, setup

try:
    if not os.path.exists("src/lwsr/_kernels.pyx"):
        raise ImportError
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "lwsr._kernels_cy",
                ["src/lwsr/_kernels.pyx"],
                extra_compile_args=["-O3"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Pure-Python fallback is selected at import time when the extension is absent.
    ext_modules = []

setup(ext_modules=ext_modules)
