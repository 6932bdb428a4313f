"""
TOPO and APLS evaluation of a predicted road graph against ground truth.

Both metrics address graph locations as ``(edge, s)`` where ``s`` is the arc
length from the edge's first vertex. Shortest paths run on a sparse matrix of
Euclidean edge lengths; nearest-edge snapping uses an STR tree.
"""

import logging
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import numpy.typing as npt
import shapely
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from .data_classes import AplsParams, RoadGraph, TopoParams
from .exceptions import ContractError
from .typing import AplsReport, EvalReport, FloatArray, IntArray, TopoReport

logger = logging.getLogger(__name__)

# Stand-in weight for zero-length edges, which sparse matrices cannot store.
_MIN_WEIGHT = 1e-12


class GraphIndex:
    """Shortest-path and nearest-edge lookups over one graph."""

    def __init__(self, graph: RoadGraph) -> None:
        self.graph = graph
        self.lengths = graph.edge_lengths()
        n = graph.num_vertices
        i, j = graph.edges[:, 0], graph.edges[:, 1]
        weights = np.maximum(self.lengths, _MIN_WEIGHT)
        self.adjacency = csr_matrix(
            (np.concatenate([weights, weights]), (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(n, n),
        )
        if graph.num_edges:
            self.lines = shapely.linestrings(graph.vertices[graph.edges])
        else:
            self.lines = np.empty(0, dtype=object)
        self.tree = shapely.STRtree(self.lines)

    @property
    def num_edges(self) -> int:
        """Number of edges."""
        return self.graph.num_edges

    def distances(self, sources: npt.ArrayLike, limit: float = np.inf) -> FloatArray:
        """Shortest-path distances from each source vertex, ``inf`` beyond ``limit``."""
        return dijkstra(  # type: ignore[no-any-return]
            self.adjacency, directed=False, indices=np.asarray(sources, dtype=np.int64), limit=limit
        )

    def point_at(self, edge: int, s: float) -> FloatArray:
        """Coordinates of location ``s`` along ``edge``."""
        a, b = self.graph.vertices[self.graph.edges[edge]]
        length = self.lengths[edge]
        if length == 0:
            return a.copy()
        return a + (s / length) * (b - a)  # type: ignore[no-any-return]

    def snap(self, points: npt.ArrayLike, radius: float) -> Tuple[IntArray, FloatArray]:
        """
        Finds the nearest edge location of each point within ``radius``.

        Returns:
            tuple: Edge index per point (-1 when nothing is in range) and the
            arc length of the nearest location along that edge.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        edges = np.full(len(pts), -1, dtype=np.int64)
        positions = np.zeros(len(pts), dtype=np.float64)
        if self.num_edges == 0 or len(pts) == 0:
            return edges, positions
        geometries = shapely.points(pts)
        (found, nearest), _ = self.tree.query_nearest(
            geometries, max_distance=radius, return_distance=True, all_matches=False
        )
        edges[found] = nearest
        positions[found] = shapely.line_locate_point(self.lines[nearest], geometries[found])
        return edges, positions

    def path_lengths(
        self, edge_a: IntArray, s_a: FloatArray, edge_b: IntArray, s_b: FloatArray
    ) -> FloatArray:
        """
        Shortest path lengths between pairs of edge locations.

        The path may leave a location through either end of its edge; two
        locations on the same edge may also connect directly. Pairs with a
        missing location (edge -1) or without a path get ``inf``.
        """
        result = np.full(len(edge_a), np.inf)
        ok = (edge_a >= 0) & (edge_b >= 0)
        if not ok.any():
            return result
        ends_a = self.graph.edges[edge_a[ok]]
        ends_b = self.graph.edges[edge_b[ok]]
        sources, inverse = np.unique(ends_a.reshape(-1), return_inverse=True)
        table = self.distances(sources)
        rows = inverse.reshape(-1, 2)
        off_a = np.stack([s_a[ok], self.lengths[edge_a[ok]] - s_a[ok]], axis=1)
        off_b = np.stack([s_b[ok], self.lengths[edge_b[ok]] - s_b[ok]], axis=1)
        best = np.full(len(rows), np.inf)
        for p in range(2):
            for q in range(2):
                via = table[rows[:, p], ends_b[:, q]]
                best = np.minimum(best, off_a[:, p] + via + off_b[:, q])
        same = edge_a[ok] == edge_b[ok]
        best[same] = np.minimum(best[same], np.abs(s_a[ok][same] - s_b[ok][same]))
        result[ok] = best
        return result


def _side_samples(
    start: FloatArray,
    span: FloatArray,
    origin: FloatArray,
    direction: FloatArray,
    radius: float,
    interval: float,
    include_end: bool,
) -> FloatArray:
    """
    Points on edge halves whose walking distance is a positive multiple of
    ``interval`` and at most ``radius``. Half ``m`` starts at ``origin[m]``
    reached at distance ``start[m]`` and runs ``span[m]`` along ``direction[m]``.
    """
    end = start + span
    last = np.floor(np.minimum(end, radius) / interval)
    if not include_end:
        last = np.where((last * interval == end) & (end <= radius), last - 1, last)
    first = np.floor(start / interval) + 1
    counts = np.maximum(last - first + 1, 0).astype(np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.zeros((0, 2))
    owner = np.repeat(np.arange(len(start)), counts)
    rank = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    offset = (first[owner] + rank) * interval - start[owner]
    return origin[owner] + offset[:, None] * direction[owner]  # type: ignore[no-any-return]


def walk_samples(
    index: GraphIndex, edge: int, s: float, radius: float, interval: float
) -> FloatArray:
    """
    Samples the sub-graph reachable from location ``(edge, s)`` within
    ``radius``: the start point plus every point whose shortest walking
    distance is a multiple of ``interval``.
    """
    graph = index.graph
    u0, v0 = graph.edges[edge]
    length0 = index.lengths[edge]
    rows = index.distances([u0, v0], limit=radius)
    reach = np.minimum(s + rows[0], (length0 - s) + rows[1])

    steps = np.arange(1, int(np.floor(radius / interval)) + 1) * interval
    along = np.concatenate([[s], s + steps[s + steps <= length0], s - steps[s - steps >= 0]])
    points = [np.stack([index.point_at(edge, x) for x in along])]

    others = np.ones(graph.num_edges, dtype=bool)
    others[edge] = False
    others &= index.lengths > 0
    a, b = graph.edges[others, 0], graph.edges[others, 1]
    lengths = index.lengths[others]
    reach_a, reach_b = reach[a], reach[b]
    live = np.isfinite(reach_a) | np.isfinite(reach_b)
    a, b, lengths, reach_a, reach_b = a[live], b[live], lengths[live], reach_a[live], reach_b[live]

    # Walking distance rises from each end until the two fronts meet at ``split``.
    both = np.isfinite(reach_a) & np.isfinite(reach_b)
    split = np.where(np.isfinite(reach_a), lengths, 0.0)
    split[both] = np.clip((reach_b[both] + lengths[both] - reach_a[both]) / 2, 0, lengths[both])
    direction = (graph.vertices[b] - graph.vertices[a]) / lengths[:, None]

    from_a = np.isfinite(reach_a)
    points.append(
        _side_samples(
            reach_a[from_a], split[from_a], graph.vertices[a[from_a]],
            direction[from_a], radius, interval, include_end=True,
        )
    )
    from_b = np.isfinite(reach_b)
    points.append(
        _side_samples(
            reach_b[from_b], lengths[from_b] - split[from_b], graph.vertices[b[from_b]],
            -direction[from_b], radius, interval, include_end=False,
        )
    )
    return np.concatenate(points, axis=0)


def greedy_match_count(marbles: FloatArray, holes: FloatArray, radius: float) -> int:
    """
    Matches marbles to holes one-to-one, closest pairs first, accepting pairs
    no farther apart than ``radius``; returns the number of matches.
    """
    if len(marbles) == 0 or len(holes) == 0:
        return 0
    neighbours = cKDTree(holes).query_ball_point(marbles, r=radius)
    counts = [len(found) for found in neighbours]
    if sum(counts) == 0:
        return 0
    i = np.repeat(np.arange(len(marbles)), counts)
    j = np.concatenate([np.asarray(found, dtype=np.int64) for found in neighbours])
    delta = marbles[i] - holes[j]
    order = np.lexsort((j, i, np.hypot(delta[:, 0], delta[:, 1])))
    used_marbles = np.zeros(len(marbles), dtype=bool)
    used_holes = np.zeros(len(holes), dtype=bool)
    count = 0
    for marble, hole in zip(i[order].tolist(), j[order].tolist()):
        if not used_marbles[marble] and not used_holes[hole]:
            used_marbles[marble] = used_holes[hole] = True
            count += 1
    return count


class SeedOutcome(NamedTuple):
    """TOPO tallies of one seed; ``origin`` is the graph it was drawn on."""

    origin: str
    x: float
    y: float
    snapped: bool
    holes: int
    marbles: int
    matched: int


def _seed_locations(
    index: GraphIndex, count: int, rng: np.random.Generator
) -> Tuple[IntArray, FloatArray]:
    cumulative = np.cumsum(index.lengths)
    total = float(cumulative[-1])
    positions = rng.uniform(0.0, total, size=count)
    edges = np.minimum(np.searchsorted(cumulative, positions, side="right"), len(cumulative) - 1)
    offsets = positions - (cumulative[edges] - index.lengths[edges])
    return edges.astype(np.int64), np.clip(offsets, 0.0, index.lengths[edges])


def _seed_points(index: GraphIndex, edges: IntArray, offsets: FloatArray) -> FloatArray:
    if len(edges) == 0:
        return np.zeros((0, 2))
    return np.stack([index.point_at(e, s) for e, s in zip(edges.tolist(), offsets.tolist())])


def topo_seeds(gt: RoadGraph, pred: RoadGraph, params: TopoParams) -> List[SeedOutcome]:
    """
    Per-seed TOPO tallies.

    Seeds are drawn uniformly by arc length on ``gt`` and snapped to the
    nearest ``pred`` location within the match radius. Holes are samples of
    the ground truth walk from the seed, marbles samples of the prediction
    walk from the snapped location. A seed that does not snap contributes
    its holes and nothing else.

    The prediction is seeded too, at the same density per unit length. A
    prediction seed with no ground truth within the match radius contributes
    the marbles of its walk, all unmatched; the others are already covered by
    the ground truth seeds and are skipped.

    Raises:
        ContractError: If ``gt`` has no edge of positive length.
    """
    gt_index = GraphIndex(gt)
    if gt.num_edges == 0 or gt_index.lengths.sum() <= 0:
        raise ContractError("ground truth graph has no edges")
    pred_index = GraphIndex(pred)

    edges, offsets = _seed_locations(
        gt_index, params.seed_count, np.random.default_rng([params.seed, 0])
    )
    seed_points = _seed_points(gt_index, edges, offsets)
    pred_edges, pred_offsets = pred_index.snap(seed_points, params.match_radius)

    outcomes = []
    for k, point in enumerate(seed_points):
        holes = walk_samples(
            gt_index,
            int(edges[k]),
            float(offsets[k]),
            params.propagation_radius,
            params.sample_interval,
        )
        if pred_edges[k] < 0:
            logger.debug("seed (%.1f, %.1f) does not match the prediction", *point)
            outcomes.append(SeedOutcome("gt", point[0], point[1], False, len(holes), 0, 0))
            continue
        marbles = walk_samples(
            pred_index,
            int(pred_edges[k]),
            float(pred_offsets[k]),
            params.propagation_radius,
            params.sample_interval,
        )
        matched = greedy_match_count(marbles, holes, params.match_radius)
        outcomes.append(
            SeedOutcome("gt", point[0], point[1], True, len(holes), len(marbles), matched)
        )

    pred_length = float(pred_index.lengths.sum())
    extra = int(round(params.seed_count * pred_length / float(gt_index.lengths.sum())))
    if extra == 0 or pred_length <= 0:
        return outcomes
    edges, offsets = _seed_locations(pred_index, extra, np.random.default_rng([params.seed, 1]))
    seed_points = _seed_points(pred_index, edges, offsets)
    gt_edges, _ = gt_index.snap(seed_points, params.match_radius)
    for k in np.flatnonzero(gt_edges < 0).tolist():
        marbles = walk_samples(
            pred_index,
            int(edges[k]),
            float(offsets[k]),
            params.propagation_radius,
            params.sample_interval,
        )
        point = seed_points[k]
        logger.debug("prediction seed (%.1f, %.1f) has no ground truth", *point)
        outcomes.append(SeedOutcome("pred", point[0], point[1], False, 0, len(marbles), 0))
    return outcomes


def _f1(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def toposcore(
    gt: RoadGraph,
    pred: RoadGraph,
    params: Optional[TopoParams] = None,
    outcomes: Optional[List[SeedOutcome]] = None,
) -> TopoReport:
    """
    TOPO precision, recall and F1, aggregated over all seeds.

    Precision is matched marbles over all marbles (0 when there are none),
    recall matched holes over all holes.
    """
    if outcomes is None:
        outcomes = topo_seeds(gt, pred, params or TopoParams())
    holes = sum(outcome.holes for outcome in outcomes)
    marbles = sum(outcome.marbles for outcome in outcomes)
    matched = sum(outcome.matched for outcome in outcomes)
    precision = matched / marbles if marbles else 0.0
    recall = matched / holes if holes else 0.0
    return {
        "precision": precision,
        "recall": recall,
        "f1": _f1(precision, recall),
        "seeds": sum(1 for outcome in outcomes if outcome.origin == "gt"),
        "matched_seeds": sum(1 for outcome in outcomes if outcome.snapped),
        "spurious_seeds": sum(1 for outcome in outcomes if outcome.origin == "pred"),
        "holes": holes,
        "marbles": marbles,
        "matched": matched,
    }


def apls_pair_score(length_gt: float, length_pred: float) -> float:
    """``1 - min(1, |L_gt - L_pred| / L_gt)``; a missing path scores 0."""
    if length_gt <= 0:
        raise ContractError("reference path length must be > 0")
    if not np.isfinite(length_pred):
        return 0.0
    return 1.0 - min(1.0, abs(length_gt - length_pred) / length_gt)


def sample_vertex_pairs(
    index: GraphIndex, count: int, rng: np.random.Generator
) -> Tuple[IntArray, IntArray, FloatArray]:
    """
    Draws ``count`` connected vertex pairs with a positive path length.

    The first vertex is uniform over vertices in components with at least two
    vertices, the second uniform over the rest of its component.

    Returns:
        tuple: Vertex arrays ``u`` and ``v`` and their path lengths (possibly
        fewer than ``count`` when coincident vertices are drawn).
    """
    empty = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))
    if index.num_edges == 0:
        return empty
    _, labels = connected_components(index.adjacency, directed=False)
    sizes = np.bincount(labels)
    eligible = np.flatnonzero(sizes[labels] >= 2)
    if len(eligible) == 0:
        return empty
    members = {label: np.flatnonzero(labels == label) for label in np.unique(labels[eligible])}

    u = eligible[rng.integers(0, len(eligible), size=count)]
    v = np.empty_like(u)
    for k, first in enumerate(u.tolist()):
        group = members[labels[first]]
        pick = int(rng.integers(0, len(group) - 1))
        position = int(np.searchsorted(group, first))
        v[k] = group[pick + 1] if pick >= position else group[pick]

    sources, inverse = np.unique(u, return_inverse=True)
    lengths = index.distances(sources)[inverse, v]
    keep = lengths > 0
    return u[keep], v[keep], lengths[keep]


def directional_apls(
    source: GraphIndex, target: GraphIndex, params: AplsParams, rng: np.random.Generator
) -> Tuple[float, int]:
    """
    Mean pair score of paths sampled on ``source`` and re-measured on ``target``.

    Returns:
        tuple: The score (0 when ``source`` has no connected pair) and the
        number of pairs.
    """
    u, v, lengths = sample_vertex_pairs(source, params.pair_count, rng)
    if len(u) == 0:
        return 0.0, 0
    edge_u, s_u = target.snap(source.graph.vertices[u], params.snap_radius)
    edge_v, s_v = target.snap(source.graph.vertices[v], params.snap_radius)
    measured = target.path_lengths(edge_u, s_u, edge_v, s_v)
    scores = [apls_pair_score(a, b) for a, b in zip(lengths.tolist(), measured.tolist())]
    return float(np.mean(scores)), len(scores)


def apls(gt: RoadGraph, pred: RoadGraph, params: Optional[AplsParams] = None) -> AplsReport:
    """
    Symmetric APLS: the mean of the ground-truth-to-prediction and the
    prediction-to-ground-truth directional scores.

    Raises:
        ContractError: If ``gt`` has no connected vertex pair.
    """
    params = params or AplsParams()
    gt_index = GraphIndex(gt)
    pred_index = GraphIndex(pred)
    forward, pairs = directional_apls(
        gt_index, pred_index, params, np.random.default_rng([params.seed, 0])
    )
    if pairs == 0:
        raise ContractError("ground truth graph has no connected vertex pair")
    backward, _ = directional_apls(
        pred_index, gt_index, params, np.random.default_rng([params.seed, 1])
    )
    return {
        "apls": (forward + backward) / 2,
        "gt_to_pred": forward,
        "pred_to_gt": backward,
        "pairs": pairs,
    }


def evaluate(
    gt: RoadGraph,
    pred: RoadGraph,
    topo_params: Optional[TopoParams] = None,
    apls_params: Optional[AplsParams] = None,
) -> EvalReport:
    """Computes both metrics and merges them into one report."""
    topo = toposcore(gt, pred, topo_params)
    detail = apls(gt, pred, apls_params)
    return {
        "precision": topo["precision"],
        "recall": topo["recall"],
        "f1": topo["f1"],
        "apls": detail["apls"],
        "topo": topo,
        "apls_detail": detail,
    }
