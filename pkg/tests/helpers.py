"""Random fixtures and brute-force oracles shared by the tests."""

import numpy as np
import torch

from roadgraph.data_classes import RoadGraph
from roadgraph.toponet import TopoNet, bce_loss, build_sample


def random_graph(rng: np.random.Generator, count: int, extent: float = 200.0) -> RoadGraph:
    """A random geometric graph: every vertex links to up to two nearest neighbours."""
    vertices = rng.uniform(0.0, extent, size=(count, 2))
    edges = set()
    for i in range(count):
        distance = np.hypot(*(vertices - vertices[i]).T)
        distance[i] = np.inf
        for j in np.argsort(distance)[: int(rng.integers(1, 3))].tolist():
            edges.add((min(i, j), max(i, j)))
    return RoadGraph(vertices, np.array(sorted(edges), dtype=np.int64).reshape(-1, 2))


def brute_nms(points: np.ndarray, scores: np.ndarray, radius: float) -> list:
    """Greedy suppression, written out literally: highest score first, ties by (y, x)."""
    order = sorted(
        range(len(points)), key=lambda i: (-scores[i], points[i][1], points[i][0])
    )
    kept: list = []
    for i in order:
        if all(
            (points[i][0] - points[k][0]) ** 2 + (points[i][1] - points[k][1]) ** 2
            >= radius * radius
            for k in kept
        ):
            kept.append(i)
    return kept


def brute_extract(mask: np.ndarray, threshold: float, radius: float) -> set:
    """Road NMS, intersection NMS, join with boosted intersections, NMS again."""

    def candidates(channel: np.ndarray) -> list:
        return [
            (float(x), float(y), float(channel[y, x]))
            for y in range(channel.shape[0])
            for x in range(channel.shape[1])
            if channel[y, x] > threshold
        ]

    def suppress(rows: list) -> list:
        if not rows:
            return []
        pts = [(r[0], r[1]) for r in rows]
        kept = brute_nms(pts, [r[2] for r in rows], radius)
        return [rows[k] for k in kept]

    road = suppress(candidates(mask[:, :, 0]))
    crossing = [(x, y, s + 2.0) for x, y, s in suppress(candidates(mask[:, :, 1]))]
    return {(x, y) for x, y, _ in suppress(road + crossing)}


def brute_road_raster(graph: RoadGraph, width: int, height: int) -> np.ndarray:
    """Tests every pixel center against every edge."""
    out = np.zeros((height, width), dtype=np.float32)
    for i, j in graph.edges.tolist():
        ax, ay = (float(v) for v in graph.vertices[i])
        bx, by = (float(v) for v in graph.vertices[j])
        ux, uy = bx - ax, by - ay
        length_sq = ux * ux + uy * uy
        for y in range(height):
            for x in range(width):
                px, py = x - ax, y - ay
                t = 0.0 if length_sq == 0 else min(1.0, max(0.0, (px * ux + py * uy) / length_sq))
                dx, dy = px - t * ux, py - t * uy
                if dx * dx + dy * dy <= 2.25:
                    out[y, x] = 1.0
    return out


def brute_connectivity(
    graph: RoadGraph, anchors: np.ndarray, source: int, targets: list, radius: float
) -> list:
    """
    Relaxes edges until nothing changes, never relaxing out of a target anchor
    other than the source's own; a target is reached within ``radius``.
    """
    start = int(anchors[source])
    blocked = {int(anchors[t]) for t in targets} - {start}
    distance = [float("inf")] * graph.num_vertices
    distance[start] = 0.0
    lengths = graph.edge_lengths().tolist()
    changed = True
    while changed:
        changed = False
        for (i, j), length in zip(graph.edges.tolist(), lengths):
            for u, v in ((i, j), (j, i)):
                if u in blocked or distance[u] + length > radius:
                    continue
                if distance[u] + length < distance[v]:
                    distance[v] = distance[u] + length
                    changed = True
    return [1.0 if distance[int(anchors[t])] <= radius else 0.0 for t in targets]


def labelled_samples(rng, fmap, cfg, count, vertex_count=24):
    """Random vertices inside the map window with random labels on valid slots."""
    vertices = rng.uniform(0.0, fmap.width - 1.0, size=(vertex_count, 2))
    samples = []
    for source in rng.choice(vertex_count, size=count, replace=False).tolist():
        sample = build_sample(vertices, source, cfg)
        sample.labels = np.where(sample.valid, rng.integers(0, 2, sample.max_neighbors), 0.0)
        samples.append(sample)
    return samples


def _relu_patterns(net: TopoNet):
    """Records the sign pattern of every feed-forward pre-activation."""
    patterns = []
    handles = [
        block.ffn_in.register_forward_hook(
            lambda _module, _inputs, output: patterns.append(output.detach() > 0)
        )
        for block in net.blocks
    ]
    return patterns, handles


def check_gradients(net, inputs, valid, labels, entries=None, rng=None):
    """
    Compares autograd gradients with central differences (h = 1e-4) and
    returns the largest relative error. Entries whose perturbation flips a
    ReLU are skipped; the fraction skipped is returned as well.
    """
    h = 1e-4
    net.zero_grad(set_to_none=True)
    bce_loss(net.probabilities(inputs, valid), labels, valid).backward()
    analytic = {name: param.grad.detach().clone() for name, param in net.named_parameters()}

    patterns, handles = _relu_patterns(net)
    worst, checked, skipped = 0.0, 0, 0
    try:
        with torch.no_grad():
            for name, param in net.named_parameters():
                flat = param.view(-1)
                indices = range(flat.numel())
                if entries is not None and flat.numel() > entries:
                    indices = rng.choice(flat.numel(), size=entries, replace=False).tolist()
                for index in indices:
                    original = flat[index].item()
                    patterns.clear()
                    flat[index] = original + h
                    plus = bce_loss(net.probabilities(inputs, valid), labels, valid).item()
                    flat[index] = original - h
                    minus = bce_loss(net.probabilities(inputs, valid), labels, valid).item()
                    flat[index] = original
                    half = len(patterns) // 2
                    if any(
                        not torch.equal(a, b) for a, b in zip(patterns[:half], patterns[half:])
                    ):
                        skipped += 1
                        continue
                    numeric = (plus - minus) / (2 * h)
                    exact = analytic[name].view(-1)[index].item()
                    error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-4)
                    worst = max(worst, error)
                    checked += 1
    finally:
        for handle in handles:
            handle.remove()
    return worst, skipped / max(1, checked + skipped)
