"""Builds the `mvcnn._core` extension through the project's cmake tree.

All metadata lives in pyproject.toml; this file only teaches setuptools how
to produce the extension module.
"""

import pathlib
import subprocess
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source_dir = pathlib.Path(__file__).parent.resolve()
        out_dir = pathlib.Path(self.get_ext_fullpath(ext.name)).parent.resolve()
        build_dir = pathlib.Path(self.build_temp).resolve()
        build_dir.mkdir(parents=True, exist_ok=True)

        subprocess.run(
            [
                "cmake",
                str(source_dir),
                "-DCMAKE_BUILD_TYPE=Release",
                "-DMVCNN_BUILD_PYTHON=ON",
                "-DMVCNN_BUILD_TESTS=OFF",
                "-DMVCNN_BUILD_CLI=OFF",
                f"-DPython3_EXECUTABLE={sys.executable}",
                f"-DMVCNN_PYTHON_OUTPUT_DIR={out_dir}",
            ],
            cwd=build_dir,
            check=True,
        )
        subprocess.run(
            ["cmake", "--build", ".", "--target", "_core", "--parallel"],
            cwd=build_dir,
            check=True,
        )


setup(
    ext_modules=[CMakeExtension("mvcnn._core")],
    cmdclass={"build_ext": CMakeBuild},
)
