"""Build the optional compiled kernel core.

The package works without it: ``sketchkm._backend`` falls back to numpy
implementations when the extension cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("SKETCHKM_NO_EXT", "") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "sketchkm._ckernels",
                    sources=["src/sketchkm/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
