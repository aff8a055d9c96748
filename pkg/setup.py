import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # numpy fallback is used at import time
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("MTGAME_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "mtgame._kernels",
                ["src/mtgame/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
