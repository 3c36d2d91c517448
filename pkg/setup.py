"""Build script for the optional compiled oracle kernels.

If Cython or a C compiler is unavailable the package still installs and
``nco.kernels`` falls back to the numpy implementation at import time.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("NCO_NO_EXTENSION"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "nco._ckernels",
                    ["src/nco/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    optional=True,
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
