"""Build hook for the compiled step kernel.

The package works without the extension (a NumPy fallback is selected at
import time), but the compiled kernel is what makes long runs cheap, so the
default build compiles it.  -ffp-contract=off keeps the C arithmetic
bit-identical to NumPy's (no FMA contraction), which the cross-kernel
equality tests rely on.
"""

import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

extensions = [
    Extension(
        "branchsel._kernel",
        ["src/branchsel/_kernel.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
