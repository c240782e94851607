import pathlib

from pkg_resources import parse_requirements
from setuptools import find_packages, setup

LIBRARY_NAME = "sharing_club"

# List of requirements
with pathlib.Path('requirements.txt').open() as requirements_txt:
    install_requires = [
        str(requirement) for requirement in parse_requirements(requirements_txt)
    ]

setup(
    name=LIBRARY_NAME,
    packages=find_packages(include=[LIBRARY_NAME]),
    package_data={LIBRARY_NAME: ["data/*.json"]},
    version="0.1.0",
    description="Mean-field analysis and simulation of information sharing clubs.",
    license="MIT",
    install_requires=install_requires,
    entry_points={"console_scripts": ["sharing-club=sharing_club.cli:main"]},
    python_requires=">=3.9",
    setup_requires=["pytest-runner"],
    tests_require=["pytest"],
    test_suite="tests",
)
