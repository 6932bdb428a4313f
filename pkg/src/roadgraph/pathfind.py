"""
Path-search topology: decides whether two vertices are connected by running
A* over the fused road map instead of asking the topology decoder.
"""

import logging
import math
from typing import Dict, Optional, Tuple

import networkx as nx
import numpy as np
import numpy.typing as npt

from .constants import ASTAR_ROAD_FLOOR
from .data_classes import ExtractionConfig, ProbMask
from .exceptions import ContractError
from .typing import FloatArray, IntArray

logger = logging.getLogger(__name__)

Pixel = Tuple[int, int]

# 8-neighbour steps; the opposite directions come from the undirected graph.
_STEPS = ((1, 0), (0, 1), (1, 1), (1, -1))


class RoadCostField:
    """
    Pixel graph of the road channel with a per-pixel cost of
    ``-ln(max(p, floor))``.

    Nodes are pixels whose road probability reaches ``floor`` plus the pixels
    inside every vertex disc of radius ``nms_radius / 2``, so each vertex can
    be entered even where the road channel is weak. A step between
    8-neighbours costs its length times the mean cost of its two pixels.
    """

    def __init__(
        self,
        mask: ProbMask,
        vertices: npt.ArrayLike,
        cfg: ExtractionConfig,
        floor: float = ASTAR_ROAD_FLOOR,
    ) -> None:
        if not 0.0 < floor < 1.0:
            raise ContractError(f"floor must lie in (0, 1), got {floor}")
        self.cfg = cfg
        points = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
        self.pixels: IntArray = np.column_stack(
            [
                np.clip(np.rint(points[:, 0]), 0, mask.width - 1),
                np.clip(np.rint(points[:, 1]), 0, mask.height - 1),
            ]
        ).astype(np.int64)

        road = mask.road.astype(np.float64)
        cost = -np.log(np.clip(road, floor, 1.0))
        self.owner = self._vertex_discs(mask.height, mask.width, cfg.nms_radius / 2)
        passable = (road >= floor) | (self.owner >= 0)
        self.min_cost = float(cost[passable].min()) if passable.any() else 0.0
        self.graph = self._pixel_graph(passable, cost)
        logger.debug(
            "cost field: %d pixels, %d steps, %d vertices",
            self.graph.number_of_nodes(),
            self.graph.number_of_edges(),
            len(self.pixels),
        )

    def _vertex_discs(self, height: int, width: int, radius: float) -> IntArray:
        owner = np.full((height, width), -1, dtype=np.int64)
        reach = int(math.ceil(radius))
        for index, (x, y) in enumerate(self.pixels.tolist()):
            x0, x1 = max(x - reach, 0), min(x + reach + 1, width)
            y0, y1 = max(y - reach, 0), min(y + reach + 1, height)
            yy, xx = np.mgrid[y0:y1, x0:x1]
            inside = (xx - x) ** 2 + (yy - y) ** 2 < radius * radius
            owner[y0:y1, x0:x1][inside] = index
            owner[y, x] = index
        return owner

    @staticmethod
    def _pixel_graph(passable: npt.NDArray[np.bool_], cost: FloatArray) -> "nx.Graph[Pixel]":
        graph: "nx.Graph[Pixel]" = nx.Graph()
        ys, xs = np.nonzero(passable)
        graph.add_nodes_from(zip(xs.tolist(), ys.tolist()))
        height, width = passable.shape
        for dx, dy in _STEPS:
            # Shift so that (y, x) pairs with (y + dy, x + dx) inside the image.
            ya, yb = (0, height - dy) if dy >= 0 else (-dy, height)
            xa, xb = 0, width - dx
            here = passable[ya:yb, xa:xb] & passable[ya + dy : yb + dy, xa + dx : xb + dx]
            ys, xs = np.nonzero(here)
            ys, xs = ys + ya, xs + xa
            step = math.hypot(dx, dy)
            weights = step * (cost[ys, xs] + cost[ys + dy, xs + dx]) / 2
            graph.add_weighted_edges_from(
                zip(
                    zip(xs.tolist(), ys.tolist()),
                    zip((xs + dx).tolist(), (ys + dy).tolist()),
                    weights.tolist(),
                )
            )
        return graph

    def path_cost(self, source: int, target: int) -> Optional[float]:
        """
        Cost of the cheapest path from ``source`` to ``target``.

        The path may not enter the disc of any other vertex and stays inside
        the square of half side ``neighbor_radius + nms_radius`` around the
        source. Returns None when no such path exists.
        """
        count = len(self.pixels)
        if not (0 <= source < count and 0 <= target < count) or source == target:
            raise ContractError(f"cannot search a path from {source} to {target}")
        sx, sy = (int(v) for v in self.pixels[source])
        tx, ty = (int(v) for v in self.pixels[target])
        half = self.cfg.neighbor_radius + self.cfg.nms_radius
        owner = self.owner

        def weight(_u: Pixel, v: Pixel, data: Dict[str, float]) -> Optional[float]:
            x, y = v
            if abs(x - sx) > half or abs(y - sy) > half:
                return None
            held = owner[y, x]
            if held >= 0 and held != source and held != target:
                return None
            return data["weight"]

        def heuristic(u: Pixel, v: Pixel) -> float:
            return math.hypot(u[0] - v[0], u[1] - v[1]) * self.min_cost

        try:
            return float(
                nx.astar_path_length(
                    self.graph, (sx, sy), (tx, ty), heuristic=heuristic, weight=weight
                )
            )
        except nx.NetworkXNoPath:
            return None

    def score(self, source: int, target: int) -> float:
        """
        Edge probability of a vertex pair: ``exp(-cost / distance)``.

        This is the geometric mean road probability along a straight path,
        shrinking further with every detour; 0 when no path exists.
        """
        cost = self.path_cost(source, target)
        if cost is None:
            return 0.0
        gap = self.pixels[source] - self.pixels[target]
        return math.exp(-cost / max(math.hypot(*gap.tolist()), 1.0))
