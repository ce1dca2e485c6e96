"""Builds the optional Cython spline kernel; the package falls back to numpy when
the extension is unavailable."""
import os

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "cardlearn._kernels._spline_ext",
                [os.path.join("src", "cardlearn", "_kernels", "_spline_ext.pyx")],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    print(f"cardlearn: building without compiled kernels ({exc})")

setup(ext_modules=ext_modules)
