from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:  # pure-Python install; rpdi.monitor falls back to PyMonitor
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "rpdi._fastmonitor",
                ["src/rpdi/_fastmonitor.pyx"],
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
