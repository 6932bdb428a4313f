"""Main entrypoint for the roadgraph package."""

from .util import main

if __name__ == "__main__":
    main()
