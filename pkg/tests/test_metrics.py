"""Tests for the TOPO and APLS metrics."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from roadgraph.data_classes import AplsParams, RoadGraph, TopoParams
from roadgraph.exceptions import ContractError
from roadgraph.metrics import (
    GraphIndex,
    apls,
    apls_pair_score,
    evaluate,
    greedy_match_count,
    topo_seeds,
    toposcore,
    walk_samples,
)


def _path(length: float = 1000.0, step: float = 50.0) -> RoadGraph:
    count = int(length / step) + 1
    vertices = [[100.0 + step * k, 200.0] for k in range(count)]
    return RoadGraph.from_lists(vertices, [[k, k + 1] for k in range(count - 1)])


def _without_edge(graph: RoadGraph, edge: int) -> RoadGraph:
    return RoadGraph(graph.vertices, np.delete(graph.edges, edge, axis=0))


def _with_segment(graph: RoadGraph, a, b) -> RoadGraph:
    n = graph.num_vertices
    return RoadGraph(
        np.vstack([graph.vertices, [a, b]]), np.vstack([graph.edges, [[n, n + 1]]])
    )


class TestGraphIndex:
    def test_walk_on_a_line(self):
        index = GraphIndex(RoadGraph.from_lists([[0, 0], [100, 0]], [[0, 1]]))
        points = walk_samples(index, 0, 50.0, 30.0, 5.0)
        assert len(points) == 13
        assert_allclose(np.sort(points[:, 0]), np.arange(20.0, 81.0, 5.0))

    def test_walk_through_a_junction(self, cross):
        index = GraphIndex(cross)
        points = walk_samples(index, 0, 0.0, 20.0, 5.0)
        # Start point plus four samples on each of the four arms.
        assert len(points) == 17

    def test_snap_radius(self):
        index = GraphIndex(RoadGraph.from_lists([[0, 0], [100, 0]], [[0, 1]]))
        edges, positions = index.snap([[30.0, 3.0], [30.0, 9.0]], 4.0)
        assert edges.tolist() == [0, -1]
        assert positions[0] == pytest.approx(30.0)

    def test_path_lengths(self, square_grid):
        index = GraphIndex(square_grid)
        # Edge 0 runs (40, 40)-(120, 40); edge 11 runs (120, 200)-(200, 200).
        length = index.path_lengths(
            np.array([0, 0]), np.array([10.0, 10.0]), np.array([11, 0]), np.array([40.0, 70.0])
        )
        assert_allclose(length, [70.0 + 160.0 + 40.0, 60.0])

    def test_unreachable(self):
        graph = RoadGraph.from_lists([[0, 0], [10, 0], [50, 0], [60, 0]], [[0, 1], [2, 3]])
        index = GraphIndex(graph)
        length = index.path_lengths(np.array([0]), np.array([5.0]), np.array([1]), np.array([5.0]))
        assert np.isinf(length[0])


class TestGreedyMatching:
    def test_nearest_pairs_first(self):
        marbles = np.array([[0.0, 0.0], [3.0, 0.0]])
        holes = np.array([[2.0, 0.0], [5.0, 0.0]])
        assert greedy_match_count(marbles, holes, 2.5) == 1

    def test_one_to_one(self):
        marbles = np.zeros((3, 2))
        holes = np.array([[1.0, 0.0]])
        assert greedy_match_count(marbles, holes, 2.0) == 1

    def test_empty(self):
        assert greedy_match_count(np.zeros((0, 2)), np.zeros((2, 2)), 5.0) == 0


class TestTopo:
    def test_identical_graphs(self, square_grid):
        report = toposcore(square_grid, square_grid, TopoParams(seed_count=100))
        assert report["precision"] == pytest.approx(1.0, abs=1e-6)
        assert report["recall"] == pytest.approx(1.0, abs=1e-6)
        assert report["f1"] == pytest.approx(1.0, abs=1e-6)
        assert report["seeds"] == report["matched_seeds"] == 100
        assert report["spurious_seeds"] == 0

    def test_cut_path_loses_recall(self):
        gt = _path()
        report = toposcore(gt, _without_edge(gt, 10), TopoParams(seed_count=200))
        assert report["recall"] < report["precision"]
        assert report["matched_seeds"] < report["seeds"]

    def test_spurious_segment_loses_precision(self):
        gt = _path()
        pred = _with_segment(gt, [300.0, 500.0], [400.0, 500.0])
        report = toposcore(gt, pred, TopoParams(seed_count=200))
        assert report["precision"] < 1.0
        assert report["recall"] == pytest.approx(1.0, abs=1e-6)
        assert report["spurious_seeds"] > 0

    def test_empty_prediction(self, cross):
        report = toposcore(cross, RoadGraph.empty(), TopoParams(seed_count=50))
        assert report["precision"] == 0.0
        assert report["recall"] == 0.0
        assert report["matched_seeds"] == 0

    def test_empty_ground_truth(self, cross):
        with pytest.raises(ContractError):
            toposcore(RoadGraph.empty(), cross)

    def test_seed_outcomes(self, cross):
        outcomes = topo_seeds(cross, cross, TopoParams(seed_count=20, seed=3))
        assert len(outcomes) == 20
        assert all(o.origin == "gt" and o.snapped for o in outcomes)
        assert all(o.matched == o.holes == o.marbles for o in outcomes)
        again = topo_seeds(cross, cross, TopoParams(seed_count=20, seed=3))
        assert outcomes == again

    def test_report_from_outcomes(self, cross):
        params = TopoParams(seed_count=30)
        outcomes = topo_seeds(cross, cross, params)
        assert toposcore(cross, cross, outcomes=outcomes) == toposcore(cross, cross, params)


class TestApls:
    def test_pair_score(self):
        assert apls_pair_score(100.0, 90.0) == pytest.approx(0.9)
        assert apls_pair_score(100.0, 250.0) == 0.0
        assert apls_pair_score(100.0, float("inf")) == 0.0
        with pytest.raises(ContractError):
            apls_pair_score(0.0, 1.0)

    def test_identical_graphs(self, square_grid):
        report = apls(square_grid, square_grid, AplsParams(pair_count=200))
        assert report["apls"] == pytest.approx(1.0, abs=1e-6)
        assert report["gt_to_pred"] == pytest.approx(1.0, abs=1e-6)
        assert report["pred_to_gt"] == pytest.approx(1.0, abs=1e-6)
        assert report["pairs"] == 200

    def test_missing_only_edge(self):
        gt = RoadGraph.from_lists([[0, 0], [100, 0]], [[0, 1]])
        pred = RoadGraph.from_lists([[0, 0], [100, 0]])
        report = apls(gt, pred)
        assert report["gt_to_pred"] == 0.0
        assert report["apls"] == 0.0

    def test_detour_is_penalized(self):
        gt = RoadGraph.from_lists([[0, 0], [100, 0]], [[0, 1]])
        pred = RoadGraph.from_lists([[0, 0], [50, 20], [100, 0]], [[0, 1], [1, 2]])
        report = apls(gt, pred)
        detour = 2 * np.hypot(50.0, 20.0)
        assert report["gt_to_pred"] == pytest.approx(1.0 - (detour - 100.0) / 100.0)

    def test_cut_lowers_score(self):
        gt = _path()
        assert apls(gt, _without_edge(gt, 10))["apls"] < apls(gt, gt)["apls"]

    def test_ground_truth_without_pairs(self):
        with pytest.raises(ContractError):
            apls(RoadGraph.from_lists([[0, 0], [5, 5]]), RoadGraph.empty())

    def test_same_seed_same_score(self, square_grid):
        pred = _without_edge(square_grid, 3)
        assert apls(square_grid, pred, AplsParams(seed=4)) == apls(
            square_grid, pred, AplsParams(seed=4)
        )


def test_evaluate_merges_reports(cross):
    report = evaluate(cross, cross, TopoParams(seed_count=20), AplsParams(pair_count=20))
    assert report["f1"] == pytest.approx(1.0, abs=1e-6)
    assert report["apls"] == pytest.approx(1.0, abs=1e-6)
    assert report["topo"]["seeds"] == 20
    assert report["apls_detail"]["pairs"] == 20
