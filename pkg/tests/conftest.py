"""Shared fixtures for the roadgraph tests."""

import pytest

from roadgraph.data_classes import ExtractionConfig, RoadGraph


@pytest.fixture
def cfg() -> ExtractionConfig:
    """Default extraction parameters."""
    return ExtractionConfig()


@pytest.fixture
def cross() -> RoadGraph:
    """A 4-way crossing at (100, 100) with 60 px arms."""
    return RoadGraph.from_lists(
        [[100, 100], [160, 100], [100, 40], [40, 100], [100, 160]],
        [[0, 1], [0, 2], [0, 3], [0, 4]],
    )


@pytest.fixture
def square_grid() -> RoadGraph:
    """A 3 x 3 lattice of vertices 80 px apart, origin at (40, 40)."""
    vertices = [[40 + 80 * c, 40 + 80 * r] for r in range(3) for c in range(3)]
    edges = []
    for r in range(3):
        for c in range(3):
            k = 3 * r + c
            if c < 2:
                edges.append([k, k + 1])
            if r < 2:
                edges.append([k, k + 3])
    return RoadGraph.from_lists(vertices, edges)
