"""Build script: compiles the optional native kernel extension.

The extension is best-effort. If Cython or a C compiler is unavailable the
package installs anyway and falls back to the pure-Python kernels at import
time (see deltaserve._kernels).
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """build_ext that downgrades compile failures to a warning."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - exercised only on broken toolchains
            print(f"WARNING: native kernel build failed ({exc}); using pure-Python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            print(f"WARNING: could not compile {ext.name} ({exc}); using pure-Python fallback")


ext_modules = []
if not os.environ.get("DELTASERVE_SKIP_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "deltaserve._kernels._native",
                    ["src/deltaserve/_kernels/_native.pyx"],
                )
            ],
            language_level=3,
        )
    except ImportError:  # pragma: no cover
        print("WARNING: Cython not available; skipping native kernels")

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
