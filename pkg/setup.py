"""Builds the optional Cython LSTM kernels; the package falls back to numpy without them."""
from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:
    pass
else:
    ext_modules = cythonize(
        [
            Extension(
                "trendkern.numcore._lstm_kernels",
                ["src/trendkern/numcore/_lstm_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no -ffast-math: IEEE semantics keep runs bitwise reproducible
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
