import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the compiled kernels when a toolchain is available.

    The package selects the pure-Python kernels at import time when the
    extension is absent, so a failed build downgrades instead of breaking
    the install.
    """

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing entirely
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            f"warning: compiled kernels were not built ({exc}); "
            "fundusrag will use the pure-Python kernels"
        )


def extensions():
    if os.environ.get("FUNDUSRAG_NO_EXT") == "1":
        return []
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "fundusrag._kernels._ext",
        sources=["src/fundusrag/_kernels/_ext.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(cmdclass={"build_ext": optional_build_ext}, ext_modules=extensions())
