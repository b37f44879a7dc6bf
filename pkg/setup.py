from setuptools import setup, find_packages

setup(
    name="biobench",
    version="0.1.0",
    packages=find_packages(include=["app*", "biobench*"]),
    install_requires=[
        "pydantic>=2.7.0,<3",
        "python-dotenv>=1.0.0",
        "loguru",
        "rich>=13.0.0",
        "tqdm>=4.65.0",
        "numpy>=1.24",
        "scipy>=1.10",
    ],
    entry_points={"console_scripts": ["biobench=biobench.cli:main"]},
)
