"""
Script for building and distributing Python packages.
"""
from setuptools import find_packages, setup

VERSION = "0.1.0"

setup(
    name="trapsnet",
    version=VERSION,
    description="Size-independent neural transfer for relational MDPs",
    long_description="TraPSNet trains graph attention policies on small "
    "instances of a factored planning domain and runs them, unchanged, on "
    "larger instances of the same domain.",
    license="MIT",
    packages=find_packages(exclude=["tests"]),
    package_data={"trapsnet": ["templates/*.rddl"]},
    include_package_data=True,
    python_requires=">=3.8.0",
    install_requires=[
        "jinja2",
        "lark",
        "numpy",
        "pandas",
        "safetensors",
        "torch",
    ],
    entry_points={
        "console_scripts": ["trapsnet=trapsnet.__main__:main"],
    },
    keywords=["planning", "mdp", "reinforcement-learning", "transfer",
              "graph-attention"],
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Education",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
)
