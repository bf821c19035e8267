import sys

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the numpy fallback is used at runtime
    ext_modules = []
else:
    if sys.platform == "win32":
        cflags, lflags = ["/O2", "/openmp", "/fp:precise"], []
    else:
        # no fused multiply-add: results must match the numpy fallback bit for bit
        cflags = ["-O3", "-fopenmp", "-ffp-contract=off"]
        lflags = ["-fopenmp"]
    ext_modules = cythonize(
        [Extension("rfcascade._core", ["src/rfcascade/_core.pyx"],
                   extra_compile_args=cflags, extra_link_args=lflags,
                   optional=True)],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
