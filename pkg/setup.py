"""Build script for the optional compiled kernels.

The extension is a pure speedup: if it cannot be built (no compiler, no
Cython and no pre-generated C file) the install still succeeds and the
package falls back to the NumPy kernels at import time.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

HERE = os.path.abspath(os.path.dirname(__file__))
PYX = os.path.join("src", "spue", "_kernels_c.pyx")
C = os.path.join("src", "spue", "_kernels_c.c")


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing etc.
            print(f"warning: skipping compiled kernels ({exc}); NumPy backend will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: skipping {ext.name} ({exc}); NumPy backend will be used")


EXTRA_COMPILE_ARGS = ["-O3"]


def kernel_extensions():
    try:
        from Cython.Build import cythonize

        return cythonize(
            [Extension("spue._kernels_c", [PYX], extra_compile_args=EXTRA_COMPILE_ARGS)],
            language_level=3,
        )
    except ImportError:
        if os.path.exists(os.path.join(HERE, C)):
            return [Extension("spue._kernels_c", [C], extra_compile_args=EXTRA_COMPILE_ARGS)]
        return []


setup(ext_modules=kernel_extensions(), cmdclass={"build_ext": OptionalBuildExt})
