import os
import sys

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Skip the compiled core when no compiler is available; the package falls back to numpy."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            print(f"warning: compiled kernels not built ({exc}); using pure-Python fallback", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            print(f"warning: failed to build {ext.name} ({exc})", file=sys.stderr)


def extensions():
    if os.environ.get("EPRC_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    simd = ["-O3", "-march=native", "-ffast-math", "-fopenmp-simd"]
    exts = [
        Extension(
            "eprc._ext._coder",
            ["src/eprc/_ext/_coder.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
        ),
        Extension(
            "eprc._ext._density",
            ["src/eprc/_ext/_density.pyx", "src/eprc/_ext/density_kernel.c"],
            include_dirs=[np.get_include(), "src/eprc/_ext"],
            extra_compile_args=simd,
            libraries=["mvec", "m"],
        ),
    ]
    return cythonize(exts, compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
