import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("BRLGAN_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "brlgan._kernels",
                ["src/brlgan/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no FMA contraction: matmul_ordered must match the numpy twin bit for bit
                extra_compile_args=["-O2", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
