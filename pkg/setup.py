"""Setup file for dsem-sheaf."""
from setuptools import setup, find_packages

with open('README.md') as f:
    long_description = f.read()

setup(
    name="dsem-sheaf",
    version="0.1.0",
    packages=find_packages(),
    package_data={
        "dsem_sheaf": ["assets/templates/*", "tests/data/*"]
    },
    description="Dynamic structural equation models as netlists and "
    "sheaves of timeseries.",
    long_description=long_description,
    long_description_content_type='text/markdown',
    license="Apache License 2.0",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "License :: OSI Approved :: Apache Software License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
    ],
    # What does your project relate to?
    keywords="sheaf consistency radius structural equation model timeseries",
    entry_points={
        'console_scripts': ['dsem-sheaf=dsem_sheaf.cli:main']
    },
    zip_safe=False,
    install_requires=[
        "numpy>=1.20",
        "scipy>=1.7",
        "pandas>=1.0",
        "networkx>=2.5",
        "loguru>=0.3.2",
        "jinja2>=2.10.3",
    ],
    python_requires=">=3.8",
    extras_require={
        "dev": [""],
        "test": ["coverage", "pytest", "pytest-cov", "flake8"],
    },
)
