from setuptools import setup, find_packages

setup(
    name="voxeldetkit",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*", "migrations", "migrations.*"]),
    install_requires=[
        "numpy>=1.24.0",
        "SQLAlchemy>=2.0.0",
        "alembic>=1.15.0",
        "pillow>=9.4.0",
        "tqdm>=4.64.1",
    ],
    extras_require={
        "dev": [
            "pytest>=7.3.1",
            "hypothesis>=6.70.0",
            "black>=23.1.0",
            "pylint>=2.16.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "voxeldet=src.cli.main:main",
        ],
    },
    python_requires=">=3.8",
)
