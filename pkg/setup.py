"""Build script: compiles the simulation kernel extension when Cython is
available, otherwise installs with the pure Python kernel only."""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "csbpq.kernels._engine_cy",
                ["src/csbpq/kernels/_engine_cy.pyx"],
                # no -ffast-math / -march: kernel output must be bit-identical
                # to the pure Python twin, which rules out FP contraction and
                # reassociation.
                extra_compile_args=["-O2"],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
