"""Tests for sliding-window inference and threshold sweeps."""

import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose

from roadgraph.data_classes import ProbMask, RoadGraph, TopoNetConfig, WindowGrid
from roadgraph.exceptions import ContractError, DataIOError, WindowProviderError
from roadgraph.inference import (
    DirectoryProvider,
    FeatureCache,
    SceneProvider,
    ScoredEdgeAccumulator,
    fuse_windows,
    infer_graph,
    plan_windows,
    score_edges,
    sweep_mask_thresholds,
    sweep_threshold,
    window_count,
    window_sources,
)
from roadgraph.raster import rasterize_labels
from roadgraph.synth import make_encoder, noisy_masks, write_dataset
from roadgraph.toponet import TopoNet


def _constant_net(probability: float, d_feat: int = 32) -> TopoNet:
    """A decoder that scores every valid slot with ``probability``."""
    net = TopoNet(TopoNetConfig(d_feat=d_feat))
    with torch.no_grad():
        for param in net.parameters():
            param.zero_()
        net.output_head.bias.fill_(math.log(probability / (1.0 - probability)))
    return net


def _dots(width: int, height: int, points) -> ProbMask:
    """A mask whose intersection channel is 1 at the given pixels."""
    data = np.zeros((height, width, 2), dtype=np.float32)
    for x, y in points:
        data[y, x, 1] = 1.0
    return ProbMask(data)


class _FailingProvider:
    def __init__(self, inner, bad):
        self.inner = inner
        self.bad = bad

    def load_mask(self, ix, iy):
        if (ix, iy) == self.bad:
            raise DataIOError("disk on fire")
        return self.inner.load_mask(ix, iy)

    def load_features(self, ix, iy):
        return self.inner.load_features(ix, iy)


@pytest.fixture
def scene(square_grid):
    """The lattice fixture as a 256 px noisy scene on a 2 x 2 window grid."""
    mask = noisy_masks(square_grid, 256, 256, 0.02, seed=0)
    return mask, WindowGrid(256, 256, 128, 2, 2)


class _SlowFeatures:
    """Counts feature loads, each of which takes a while; callers meet at ``arrived``."""

    def __init__(self, inner, callers):
        self.inner = inner
        self.calls = 0
        self.fail_first = False
        self.arrived = threading.Barrier(callers, timeout=5)

    def load_mask(self, ix, iy):
        return self.inner.load_mask(ix, iy)

    def load_features(self, ix, iy):
        self.calls += 1
        if self.fail_first and self.calls == 1:
            raise DataIOError("flaky disk")
        time.sleep(0.2)
        return self.inner.load_features(ix, iy)


class TestFeatureCache:
    def test_concurrent_misses_load_once(self, scene):
        mask, grid = scene
        provider = _SlowFeatures(SceneProvider(mask, grid, make_encoder()), 8)
        cache = FeatureCache(provider)

        def load(_):
            provider.arrived.wait()
            return cache.load_features(1, 0)

        with ThreadPoolExecutor(max_workers=8) as executor:
            maps = list(executor.map(load, range(8)))
        assert provider.calls == 1
        assert (cache.hits, cache.misses) == (7, 1)
        assert all(fmap is maps[0] for fmap in maps)

    def test_failed_load_is_retried(self, scene):
        mask, grid = scene
        provider = _SlowFeatures(SceneProvider(mask, grid, make_encoder()), 1)
        provider.fail_first = True
        cache = FeatureCache(provider)
        with pytest.raises(DataIOError):
            cache.load_features(0, 0)
        assert cache.load_features(0, 0).dim == 32
        assert provider.calls == 2 and len(cache) == 1


class TestWindowPlanning:
    def test_window_count(self):
        assert window_count(512, 512, 64) == 1
        assert window_count(512, 256, 64) == 3
        assert window_count(2048, 512, 0) == 4
        with pytest.raises(ContractError):
            window_count(512, 256, 256)

    def test_thin_overlap_warns(self, caplog):
        plan_windows(2048, 2048, 512, 4, 4, neighbor_radius=64.0)
        assert "overlap" in caplog.text

    def test_sources_keep_margin_on_interior_sides(self):
        grid = WindowGrid(256, 256, 128, 2, 2)
        window = grid.windows()[0]
        local = np.array([[2.0, 2.0], [120.0, 10.0], [10.0, 126.0], [127.4, 5.0]])
        assert window_sources(local, grid, window, 8.0).tolist() == [0]


class TestAccumulator:
    def test_mean_of_observations(self):
        accumulator = ScoredEdgeAccumulator()
        accumulator.add(3, 1, 0.9)
        accumulator.add(1, 3, 0.7)
        assert accumulator.probabilities() == {(1, 3): pytest.approx(0.8)}

    def test_finalize_threshold(self):
        accumulator = ScoredEdgeAccumulator()
        accumulator.add(0, 1, 0.6)
        accumulator.add(1, 2, 0.4)
        graph = accumulator.finalize(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), 0.5)
        assert graph.edges.tolist() == [[0, 1]]

    def test_merge(self):
        left, right = ScoredEdgeAccumulator(), ScoredEdgeAccumulator()
        left.add(0, 1, 0.2)
        right.add(1, 0, 0.6)
        right.add(2, 1, 0.5)
        left.merge(right)
        assert left.probabilities() == {(0, 1): pytest.approx(0.4), (1, 2): 0.5}

    def test_self_pair(self):
        with pytest.raises(ContractError):
            ScoredEdgeAccumulator().add(2, 2, 0.5)


class TestInferGraph:
    def test_no_vertices(self, cfg):
        grid = WindowGrid(128, 128, 128)
        provider = SceneProvider(ProbMask.zeros(128, 128), grid, make_encoder())
        assert infer_graph(provider, grid, _constant_net(0.9), cfg) == RoadGraph.empty()

    def test_single_pair(self, cfg):
        grid = WindowGrid(128, 128, 128)
        provider = SceneProvider(_dots(128, 128, [(40, 40), (70, 40)]), grid, make_encoder())
        graph = infer_graph(provider, grid, _constant_net(0.6), cfg)
        assert graph.num_vertices == 2
        assert graph.edges.tolist() == [[0, 1]]
        assert infer_graph(provider, grid, _constant_net(0.4), cfg).num_edges == 0

    def test_edge_threshold_override(self, cfg):
        grid = WindowGrid(128, 128, 128)
        provider = SceneProvider(_dots(128, 128, [(40, 40), (70, 40)]), grid, make_encoder())
        net = _constant_net(0.4)
        assert infer_graph(provider, grid, net, cfg, edge_threshold=0.3).num_edges == 1

    def test_overlapping_windows_average(self, cfg):
        mask = _dots(256, 128, [(100, 60), (140, 60)])
        grid = WindowGrid(256, 128, 128, count_x=3, count_y=1)
        provider = SceneProvider(mask, grid, make_encoder())
        vertices = np.array([[100.0, 60.0], [140.0, 60.0]])
        votes = score_edges(provider, grid, _constant_net(0.7), vertices, cfg)
        assert list(votes.probabilities()) == [(0, 1)]
        assert votes.entries[(0, 1)][1] >= 2
        assert votes.probabilities()[(0, 1)] == pytest.approx(0.7, rel=1e-5)

    def test_window_order_does_not_matter(self, scene, cfg):
        mask, grid = scene
        torch.manual_seed(0)
        net = TopoNet(TopoNetConfig(d_feat=32))
        provider = FeatureCache(SceneProvider(mask, grid, make_encoder()))
        vertices = np.array([[40.0 + 8 * k, 40.0] for k in range(20)])
        forward = score_edges(provider, grid, net, vertices, cfg)
        backward = score_edges(provider, grid, net, vertices, cfg, order=grid.windows()[::-1])
        assert forward.probabilities().keys() == backward.probabilities().keys()
        for key, probability in forward.probabilities().items():
            assert backward.probabilities()[key] == pytest.approx(probability, abs=1e-9)

    def test_threads_give_identical_graphs(self, scene, cfg):
        mask, grid = scene
        torch.manual_seed(1)
        net = TopoNet(TopoNetConfig(d_feat=32))
        provider = SceneProvider(mask, grid, make_encoder())
        single = infer_graph(provider, grid, net, cfg, threads=1)
        multi = infer_graph(provider, grid, net, cfg, threads=4)
        assert single.num_vertices > 0
        assert single == multi

    def test_feature_cache_reads_each_window_once(self, scene, cfg):
        mask, grid = scene
        cache = FeatureCache(SceneProvider(mask, grid, make_encoder()))
        infer_graph(cache, grid, _constant_net(0.6), cfg, threads=2)
        assert cache.misses <= len(grid.windows())
        assert len(cache) == cache.misses
        infer_graph(cache, grid, _constant_net(0.6), cfg, threads=2)
        assert cache.misses <= len(grid.windows())
        assert cache.hits > 0

    def test_provider_failure_names_window(self, scene, cfg):
        mask, grid = scene
        provider = _FailingProvider(SceneProvider(mask, grid, make_encoder()), (1, 0))
        with pytest.raises(WindowProviderError, match=r"\(1, 0\)"):
            infer_graph(provider, grid, _constant_net(0.6), cfg)

    def test_threads_must_be_positive(self, scene, cfg):
        mask, grid = scene
        with pytest.raises(ContractError):
            infer_graph(
                SceneProvider(mask, grid, make_encoder()), grid, _constant_net(0.6), cfg, threads=0
            )

    def test_directory_provider(self, tmp_path, square_grid):
        mask = noisy_masks(square_grid, 256, 256, 0.0, seed=0)
        grid = WindowGrid(256, 256, 128, 2, 2)
        write_dataset(str(tmp_path), square_grid, mask, grid, seed=0)
        provider = DirectoryProvider.from_dataset(str(tmp_path))
        fused = fuse_windows(provider, grid, threads=2)
        assert_allclose(fused.data, mask.data, atol=1e-6)
        assert provider.load_features(1, 1).dim == 32

    def test_directory_provider_missing_window(self, tmp_path):
        grid = WindowGrid(128, 128, 128)
        provider = DirectoryProvider(str(tmp_path / "masks"), str(tmp_path / "feats"))
        with pytest.raises(WindowProviderError):
            fuse_windows(provider, grid)


class TestSweep:
    def test_prefers_higher_f1(self):
        best, rows = sweep_threshold([0.9, 0.4, 0.2], [1, 1, 0], [0.3, 0.5])
        assert best == 0.3
        assert rows[0]["f1"] == pytest.approx(1.0)
        assert rows[1]["f1"] == pytest.approx(2 / 3)

    def test_ties_go_to_smallest(self):
        best, _ = sweep_threshold([0.9, 0.8, 0.1], [1, 1, 0], [0.7, 0.3, 0.5])
        assert best == 0.3

    def test_all_positive(self):
        best, rows = sweep_threshold([0.6, 0.7], [1, 1], [0.2, 0.65, 0.9])
        assert best == 0.2
        assert rows[0]["precision"] == 1.0 and rows[0]["recall"] == 1.0
        assert rows[2]["precision"] == 0.0

    def test_no_positive(self):
        with pytest.raises(ContractError):
            sweep_threshold([0.3, 0.6], [0, 0], [0.5])

    def test_exact_mask_is_perfect(self, cross):
        labels = rasterize_labels(cross, 200, 200)
        best, rows = sweep_threshold(labels.road, labels.road > 0.5, [0.25, 0.5, 0.75])
        assert best == 0.25
        assert all(row["f1"] == 1.0 for row in rows)

    def test_mask_channels(self, square_grid):
        labels = rasterize_labels(square_grid, 256, 256)
        mask = noisy_masks(square_grid, 256, 256, 0.1, seed=2, blur_sigma=0.0)
        result = sweep_mask_thresholds(mask, labels, [0.3, 0.5, 0.7])
        assert set(result) == {"road", "intersection"}
        best, rows = result["road"]
        assert best in (0.3, 0.5, 0.7)
        assert max(row["f1"] for row in rows) > 0.9
        with pytest.raises(ContractError):
            sweep_mask_thresholds(mask, rasterize_labels(square_grid, 128, 128), [0.5])
