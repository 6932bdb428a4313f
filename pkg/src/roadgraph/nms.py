"""Vertex extraction from probability masks by greedy non-maximum suppression."""

import logging
import math
from collections import defaultdict
from typing import DefaultDict, List, Tuple

import numpy as np
import numpy.typing as npt

from .constants import INTERSECTION_SCORE_OFFSET
from .data_classes import ExtractionConfig, ProbMask, RoadGraph
from .exceptions import ContractError
from .typing import FloatArray, IntArray

logger = logging.getLogger(__name__)


def nms_order(points: FloatArray, scores: FloatArray) -> IntArray:
    """Returns the traversal order: descending score, then ascending y, then x."""
    return np.lexsort((points[:, 0], points[:, 1], -scores)).astype(np.int64)


def nms_indices(points: npt.ArrayLike, scores: npt.ArrayLike, radius: float) -> IntArray:
    """
    Greedy non-maximum suppression.

    Points are visited in :func:`nms_order`; a point is dropped when it lies
    strictly closer than ``radius`` to a point kept earlier. Kept points are
    bucketed in a grid with cell size ``radius`` so each test only looks at the
    3x3 neighbouring cells.

    Args:
        points (array-like): ``(N, 2)`` point coordinates.
        scores (array-like): ``(N,)`` finite scores.
        radius (float): Suppression radius, > 0.

    Returns:
        np.ndarray: Indices of the kept points in traversal order.
    """
    if radius <= 0:
        raise ContractError("nms radius must be > 0")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    values = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(values) != len(pts):
        raise ContractError("points and scores differ in length")
    if not np.all(np.isfinite(values)):
        raise ContractError("nms scores must be finite")
    if len(pts) == 0:
        return np.zeros(0, dtype=np.int64)

    radius_sq = radius * radius
    grid: DefaultDict[Tuple[int, int], List[int]] = defaultdict(list)
    kept: List[int] = []
    for index in nms_order(pts, values).tolist():
        x, y = pts[index]
        cx, cy = math.floor(x / radius), math.floor(y / radius)
        suppressed = False
        for gx in (cx - 1, cx, cx + 1):
            for gy in (cy - 1, cy, cy + 1):
                for other in grid.get((gx, gy), ()):
                    dx = pts[other, 0] - x
                    dy = pts[other, 1] - y
                    if dx * dx + dy * dy < radius_sq:
                        suppressed = True
                        break
                if suppressed:
                    break
            if suppressed:
                break
        if not suppressed:
            kept.append(index)
            grid[(cx, cy)].append(index)
    return np.asarray(kept, dtype=np.int64)


def nms_points(scored: npt.ArrayLike, radius: float) -> FloatArray:
    """
    Runs :func:`nms_indices` on ``(x, y, score)`` rows.

    Returns:
        np.ndarray: ``(K, 2)`` kept points in traversal order.
    """
    rows = np.asarray(scored, dtype=np.float64).reshape(-1, 3)
    keep = nms_indices(rows[:, :2], rows[:, 2], radius)
    return rows[keep, :2]


def _candidates(channel: npt.NDArray[np.float32], threshold: float) -> FloatArray:
    rows, cols = np.nonzero(channel > threshold)
    return np.stack(
        [cols.astype(np.float64), rows.astype(np.float64), channel[rows, cols].astype(np.float64)],
        axis=1,
    )


def extract_vertices(mask: ProbMask, cfg: ExtractionConfig) -> RoadGraph:
    """
    Turns a fused probability mask into graph vertices.

    Road and intersection pixels above ``cfg.threshold`` are suppressed
    separately, then joined with every intersection score raised above all
    road scores, and the joined set is suppressed once more. With
    ``cfg.use_intersections`` off the intersection channel is ignored and the
    road vertices are returned as they are. Vertices sit on pixel centers;
    the returned graph has no edges.
    """
    road = _candidates(mask.road, cfg.threshold)
    road = road[nms_indices(road[:, :2], road[:, 2], cfg.nms_radius)]
    if not cfg.use_intersections:
        logger.debug("nms: %d road vertices, intersections ignored", len(road))
        return RoadGraph(road[:, :2], np.zeros((0, 2), dtype=np.int64))

    crossing = _candidates(mask.intersection, cfg.threshold)
    crossing = crossing[nms_indices(crossing[:, :2], crossing[:, 2], cfg.nms_radius)]
    crossing[:, 2] += INTERSECTION_SCORE_OFFSET

    joined = np.concatenate([road, crossing], axis=0)
    vertices = nms_points(joined, cfg.nms_radius)
    logger.debug(
        "nms: %d road and %d intersection candidates -> %d vertices",
        len(road),
        len(crossing),
        len(vertices),
    )
    return RoadGraph(vertices, np.zeros((0, 2), dtype=np.int64))
