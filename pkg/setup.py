import os
import sys

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

openmp = [] if sys.platform == "darwin" else ["-fopenmp"]
compile_args = ["-O3", "-ffp-contract=off", *openmp]


class OptionalBuildExt(build_ext):
    """Fall back to the numpy kernels when the extension cannot be compiled."""

    def run(self):
        try:
            super().run()
        except Exception as exc:
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback")


ext_modules = []
if cythonize is not None and not os.environ.get("OVERLAY_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "terrain_overlay._ckernels",
                ["src/terrain_overlay/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=compile_args,
                extra_link_args=openmp,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
