import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "exsample._kernels",
        ["src/exsample/_kernels.pyx"],
        include_dirs=[np.get_include()],
        # no FMA contraction: results must match the pure-Python path bit for bit
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
