"""Builds the optional compiled digest kernel; the package works without it."""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [Extension("fairvfl._fnv", ["src/fairvfl/_fnv.pyx"])],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
