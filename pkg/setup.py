from setuptools import setup

# Metadata goes in setup.cfg. These are here for GitHub's dependency graph.
setup(
    name="road-graph",
    install_requires=[
        "matplotlib>=3.5.0,<4.0.0",
        "networkx>=3.0,<4.0",
        "numpy>=1.22.0,<3.0.0",
        "scipy>=1.8.0,<2.0.0",
        "shapely>=2.0.0,<3.0.0",
        "tabulate>=0.4.4,<1.0.0",
        "torch>=1.13.0",
        "tqdm>=4.60.0,<5.0.0",
        "typing-extensions>=4.1.0,<5.0.0",
    ],
)
