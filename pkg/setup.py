"""Builds the optional compiled kernel extension.

The package works without it (a numpy fallback is selected at import time),
so a failed compile downgrades to a warning instead of aborting the install.
"""

import sys

from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "pifi._fastkernels",
                ["src/pifi/_fastkernels.pyx", "src/pifi/_mmcore.c"],
                include_dirs=["src/pifi"],
                extra_compile_args=["-O3", "-march=native"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    print(f"warning: compiled kernels unavailable ({exc}); "
          "installing with the numpy fallback only", file=sys.stderr)
    extensions = []

setup(ext_modules=extensions)
