"""Version information for the roadgraph package."""

__version__ = "0.3.0"
__version_info__ = tuple(int(num) for num in __version__.split("."))
