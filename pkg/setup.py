import numpy
from setuptools import Extension, setup

# The compiled core is optional: if Cython or a C compiler is missing the
# install still succeeds and the package falls back to the NumPy backend.
try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "mragp._core._speed",
                ["src/mragp/_core/_speed.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level="3",
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
