import numpy as np
from setuptools import setup

# The compiled stepper is optional: when Cython or a C toolchain is missing
# the package falls back to the numpy kernel selected in critmass.stepping.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/critmass/_stepcore.pyx"],
        compiler_directives={"language_level": "3"},
    )
    for ext in ext_modules:
        ext.include_dirs.append(np.get_include())
        ext.extra_compile_args = ["-O3"]
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
