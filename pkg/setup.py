import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; kernels fall back to numpy
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("LOOAUDIT_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "looaudit._kernels",
                ["src/looaudit/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no FMA contraction, no reassociation: results must match the
                # numpy fallback bit for bit
                extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
