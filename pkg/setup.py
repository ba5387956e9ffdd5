from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "eulalign._core",
        ["src/eulalign/_core.pyx"],
        extra_compile_args=["-O3", "-fopenmp"],
        extra_link_args=["-fopenmp"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
