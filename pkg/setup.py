import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# The compiled kernels are optional: alwnn.kernels falls back to the numpy
# implementation when the extension is missing (see src/alwnn/kernels/__init__.py).
extensions = [
    Extension(
        "alwnn.kernels._fastconv",
        ["src/alwnn/kernels/_fastconv.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-march=native", "-mprefer-vector-width=256"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )
)
