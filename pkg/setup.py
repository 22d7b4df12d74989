"""Build script: compiles the optional GAMP kernel extension.

The package works without the extension (a NumPy implementation is selected
at import time); the build therefore degrades gracefully if Cython or a C
compiler is unavailable.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/tbma/amp/_kernels.pyx",
        language_level=3,
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
    for ext in ext_modules:
        ext.include_dirs.append(numpy.get_include())
        ext.define_macros.append(("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION"))
except ImportError:
    pass

setup(ext_modules=ext_modules)
