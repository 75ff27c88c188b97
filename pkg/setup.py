"""Build script for the compiled survival kernel.

The extension is optional: if Cython or a C toolchain is unavailable the
package installs pure-Python and the numpy fallback kernel is selected at
import time.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext = Extension(
        "nvzeno._survival",
        sources=["src/nvzeno/_survival.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize(
        [ext],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    )
except Exception as exc:  # noqa: BLE001 - any build-chain failure falls back
    sys.stderr.write(f"nvzeno: compiled kernel disabled ({exc!r}); "
                     "installing with pure-python fallback\n")

setup(ext_modules=ext_modules)
