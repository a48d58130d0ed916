#!/usr/bin/env python
"""Install script for the QTwtt toolkit (``pip install .``)."""

from pathlib import Path

from setuptools import find_packages, setup

HERE = Path(__file__).resolve().parent


def read_version() -> str:
    namespace = {}
    exec((HERE / "version.py").read_text(encoding="utf-8"), namespace)
    return namespace["__version__"]


def read_requirements():
    lines = (HERE / "requirements.txt").read_text(encoding="utf-8").splitlines()
    return [line.split("#")[0].strip() for line in lines if line.split("#")[0].strip()]


setup(
    name="qtwtt-toolkit",
    version=read_version(),
    description="Simulation and analysis of quantum two-way time transfer over free-space and fiber links",
    long_description=(HERE / "README.md").read_text(encoding="utf-8"),
    long_description_content_type="text/markdown",
    python_requires=">=3.9",
    packages=find_packages(include=["QTwttToolkit", "QTwttToolkit.*"]),
    py_modules=["config", "version"],
    package_data={"QTwttToolkit": ["presets/*.json", "README.md"]},
    install_requires=[r for r in read_requirements() if not r.startswith(("pytest", "setuptools"))],
    extras_require={"test": ["pytest>=8.2.1"]},
    entry_points={"console_scripts": ["qtwtt = QTwttToolkit.cli:main"]},
)
