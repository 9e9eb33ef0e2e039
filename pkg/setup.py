"""Build script for the optional Cython kernels.

The package works without the extension; ``scorefollow.backend`` falls back
to the numpy kernels when ``scorefollow._ckernels`` cannot be imported.
"""
from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:  # build the pure-Python package only
    pass
else:
    ext_modules = cythonize(
        [
            Extension(
                "scorefollow._ckernels",
                ["src/scorefollow/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
