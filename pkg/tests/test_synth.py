"""Tests for synthetic scenes, emulated masks and the analytic encoder."""

import os

import networkx as nx
import numpy as np
import pytest
import shapely
from numpy.testing import assert_allclose, assert_array_equal

from roadgraph.data_classes import ProbMask, RoadGraph, SceneSpec, WindowGrid
from roadgraph.exceptions import ContractError
from roadgraph.raster import rasterize_labels
from roadgraph.serialization import load_features, load_mask
from roadgraph.synth import (
    analytic_encoder,
    generate_scene,
    graph_from_lines,
    load_dataset,
    make_encoder,
    noisy_masks,
    write_dataset,
)


class TestScenes:
    @pytest.mark.parametrize("style", ["grid", "radial", "mixed"])
    def test_scene_is_connected(self, style):
        graph = generate_scene(SceneSpec(512, 512, style=style, seed=7))
        assert graph.num_vertices >= 2
        assert nx.is_connected(graph.to_networkx())
        assert graph.vertices.min() >= 0.0
        assert graph.vertices[:, 0].max() <= 511.0 and graph.vertices[:, 1].max() <= 511.0

    def test_same_seed_same_scene(self):
        spec = SceneSpec(512, 384, style="mixed", seed=3)
        assert generate_scene(spec) == generate_scene(spec)

    def test_seed_changes_scene(self):
        first = generate_scene(SceneSpec(512, 512, seed=1))
        second = generate_scene(SceneSpec(512, 512, seed=2))
        assert first != second

    def test_straight_lattice(self):
        graph = generate_scene(SceneSpec(512, 512, density=2.0, jitter=0.0, seed=0))
        # Four blocks each way: 25 crossings, four corners and twelve border tees.
        assert graph.num_vertices == 25
        assert graph.num_edges == 40
        assert np.bincount(graph.degrees()).tolist() == [0, 0, 4, 12, 9]

    def test_crossing_lines_are_noded(self):
        lines = [
            shapely.LineString([(0, 50), (100, 50)]),
            shapely.LineString([(50, 0), (50, 100)]),
        ]
        graph = graph_from_lines(lines, 2.0)
        assert graph.num_vertices == 5
        assert graph.num_edges == 4
        assert sorted(graph.degrees().tolist()) == [1, 1, 1, 1, 4]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"width": 100, "height": 512},
            {"width": 512, "height": 512, "style": "spiral"},
            {"width": 512, "height": 512, "density": 0.0},
            {"width": 512, "height": 512, "jitter": -1.0},
        ],
    )
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ContractError):
            SceneSpec(**kwargs)


class TestNoisyMasks:
    def test_no_noise_no_blur_is_exact(self, square_grid):
        mask = noisy_masks(square_grid, 256, 256, 0.0, seed=0, blur_sigma=0.0)
        assert_array_equal(mask.data, rasterize_labels(square_grid, 256, 256).data)

    def test_values_are_probabilities(self, square_grid):
        mask = noisy_masks(square_grid, 256, 256, 0.3, seed=1)
        assert mask.data.min() >= 0.0 and mask.data.max() <= 1.0

    def test_blur_keeps_road_centres_high(self, square_grid):
        mask = noisy_masks(square_grid, 256, 256, 0.0, seed=0)
        # Midpoint of the edge (40, 120)-(120, 120), far from any crossing.
        assert mask.road[120, 80] == pytest.approx(1.0, abs=0.02)
        assert mask.road[80, 80] < 0.01

    def test_seed_reproducibility(self, cross):
        first = noisy_masks(cross, 200, 200, 0.1, seed=5)
        second = noisy_masks(cross, 200, 200, 0.1, seed=5)
        other = noisy_masks(cross, 200, 200, 0.1, seed=6)
        assert_array_equal(first.data, second.data)
        assert not np.array_equal(first.data, other.data)

    def test_negative_sigma(self, cross):
        with pytest.raises(ContractError):
            noisy_masks(cross, 200, 200, -0.1, seed=0)


class TestEncoder:
    def test_shape_and_dtype(self, square_grid):
        mask = rasterize_labels(square_grid, 256, 256)
        features = analytic_encoder(mask, 0, 0, 128)
        assert features.data.shape == (8, 8, 32)
        assert features.data.dtype == np.float32
        assert features.scale == 16

    def test_empty_mask_encodes_only_position(self):
        features = analytic_encoder(ProbMask.zeros(128, 128), 0, 0, 128).data
        assert not features[..., :6].any()
        assert not features[..., 8:].any()
        assert_allclose(features[0, :, 6], (np.arange(8) + 0.5) / 8 * 2 - 1)
        assert_allclose(features[:, 0, 7], (np.arange(8) + 0.5) / 8 * 2 - 1)

    def test_deterministic(self, square_grid):
        mask = noisy_masks(square_grid, 256, 256, 0.05, seed=2)
        first = analytic_encoder(mask, 128, 0, 128)
        second = make_encoder()(mask, 128, 0, 128)
        assert_array_equal(first.data, second.data)

    def test_orientation_of_a_horizontal_road(self):
        graph = RoadGraph.from_lists([[0, 40], [127, 40]], [[0, 1]])
        features = analytic_encoder(rasterize_labels(graph, 128, 128), 0, 0, 128).data
        # Cell row 2 straddles y = 40; cos 2t is 1 along a horizontal road.
        assert features[2, 3, 4] == pytest.approx(0.0, abs=1e-6)
        assert features[2, 3, 5] == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize(
        "x0, size, d_feat",
        [(0, 120, 32), (200, 128, 32), (0, 128, 4)],
    )
    def test_invalid_arguments(self, square_grid, x0, size, d_feat):
        mask = rasterize_labels(square_grid, 256, 256)
        with pytest.raises(ContractError):
            analytic_encoder(mask, x0, 0, size, d_feat=d_feat)


class TestDataset:
    def test_round_trip(self, tmp_path, square_grid):
        mask = noisy_masks(square_grid, 256, 256, 0.05, seed=3)
        grid = WindowGrid(256, 256, 128, 2, 2)
        write_dataset(str(tmp_path), square_grid, mask, grid, seed=3, threads=2)

        scene = load_dataset(str(tmp_path))
        assert scene.graph == square_grid
        assert_array_equal(scene.mask.data, mask.data)
        assert scene.meta == {
            "image_width": 256,
            "image_height": 256,
            "window_size": 128,
            "count_x": 2,
            "count_y": 2,
            "feature_scale": 16,
            "feature_dim": 32,
            "seed": 3,
        }

        window_mask = load_mask(os.path.join(str(tmp_path), "masks", "win_1_0.rgt"))
        assert_array_equal(window_mask.data, mask.data[:128, 128:])
        features = load_features(os.path.join(str(tmp_path), "feats", "win_1_0.rgt"))
        assert_array_equal(features.data, analytic_encoder(mask, 128, 0, 128).data)
