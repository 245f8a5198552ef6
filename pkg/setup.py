# type: ignore

import re
from pathlib import Path

from setuptools import setup

requires = Path("requirements.txt").read_text().splitlines()

readme = Path("README.md").read_text()

with Path("digflow/__init__.py").open("r") as f:
    version = re.search(r"^__version__ = \"([^\"]+)\"", f.read(), re.M).group(1)

requires_optional = {
    "docs": ["sphinx>=3.5.4", "furo>=2021.4.11b34", "sphinx-copybutton>=0.3.1"],
}

setup(
    name="digflow",
    author="digflow contributors",
    url="",
    project_urls={},
    version=version,
    packages=["digflow"],
    package_data={"digflow": ["py.typed"]},
    license="MIT",
    description="Discrepancy-gated conditional flow matching with certification checks",
    long_description=readme,
    long_description_content_type="text/markdown",
    include_package_data=True,
    install_requires=requires,
    extras_require=requires_optional,
    entry_points={"console_scripts": ["digflow=digflow.cli:main"]},
    python_requires=">=3.8.0",
    classifiers=[],
)
