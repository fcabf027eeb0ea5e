"""Builds the optional compiled kernel extension.

The package works without it: dqlab.kernels falls back to pure numpy
implementations when the extension is missing.
"""
import numpy
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the Cython core if possible, otherwise install pure-Python."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"warning: compiled kernels skipped ({exc}); "
                  "falling back to numpy kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); "
                  "falling back to numpy kernels")


try:
    from Cython.Build import cythonize
    extensions = cythonize(
        [Extension(
            "dqlab._ckernels",
            ["src/dqlab/_ckernels.pyx"],
            extra_compile_args=["-O3"],
            include_dirs=[numpy.get_include()],
        )],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions, cmdclass={"build_ext": OptionalBuildExt})
