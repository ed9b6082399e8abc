"""Build script: compiles the optional convolution kernel extension.

If Cython or a C compiler is unavailable the package still installs;
the pure-numpy backend is selected at import time.
"""

import sys

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "diat.kernels.conv_ext",
        sources=["src/diat/kernels/conv_ext.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)
except ImportError as exc:
    print(f"warning: building without compiled kernels ({exc}); "
          "the numpy backend will be used", file=sys.stderr)

setup(ext_modules=ext_modules)
