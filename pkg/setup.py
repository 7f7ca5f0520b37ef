from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # the pure-Python servo loop is used instead
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "entclock._servo_ext",
                ["src/entclock/_servo_ext.pyx"],
                # keep IEEE semantics identical to the Python twin
                extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
