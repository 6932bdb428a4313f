"""Rasterizes ground-truth graphs into mask labels and fuses per-window masks
into one global mask."""

import math
from typing import Iterable, Tuple

import numpy as np
import numpy.typing as npt

from .constants import INTERSECTION_RADIUS, ROAD_HALF_WIDTH
from .data_classes import ProbMask, RoadGraph
from .exceptions import ContractError, ShapeError
from .geometry import point_segment_distance_sq
from .typing import FloatArray

BinaryRaster = npt.NDArray[np.float32]


def _pixel_box(
    lo: FloatArray, hi: FloatArray, pad: float, width: int, height: int
) -> Tuple[int, int, int, int]:
    x_lo = max(0, math.ceil(lo[0] - pad))
    y_lo = max(0, math.ceil(lo[1] - pad))
    x_hi = min(width - 1, math.floor(hi[0] + pad))
    y_hi = min(height - 1, math.floor(hi[1] + pad))
    return x_lo, y_lo, x_hi, y_hi


def _check_extent(width: int, height: int) -> None:
    if width <= 0 or height <= 0:
        raise ContractError("raster extent must be positive")


def rasterize_road_mask(graph: RoadGraph, width: int, height: int) -> BinaryRaster:
    """
    Draws every edge as a 3-pixel-wide stroke with round caps.

    A pixel is set to 1 iff its center lies within 1.5 px of some edge segment.

    Returns:
        np.ndarray: ``(height, width)`` float32 raster of 0.0 / 1.0.
    """
    _check_extent(width, height)
    out = np.zeros((height, width), dtype=np.float32)
    limit = ROAD_HALF_WIDTH * ROAD_HALF_WIDTH
    for i, j in graph.edges.tolist():
        a, b = graph.vertices[i], graph.vertices[j]
        x_lo, y_lo, x_hi, y_hi = _pixel_box(
            np.minimum(a, b), np.maximum(a, b), ROAD_HALF_WIDTH, width, height
        )
        if x_lo > x_hi or y_lo > y_hi:
            continue
        ys, xs = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
        pixels = np.stack([xs.ravel(), ys.ravel()], axis=1)
        hit = point_segment_distance_sq(pixels, a, b) <= limit
        window = out[y_lo : y_hi + 1, x_lo : x_hi + 1]
        window[hit.reshape(window.shape)] = 1.0
    return out


def rasterize_intersection_mask(graph: RoadGraph, width: int, height: int) -> BinaryRaster:
    """
    Draws a disc of radius 3 px around every vertex whose degree is not 2.

    Returns:
        np.ndarray: ``(height, width)`` float32 raster of 0.0 / 1.0.
    """
    _check_extent(width, height)
    out = np.zeros((height, width), dtype=np.float32)
    limit = INTERSECTION_RADIUS * INTERSECTION_RADIUS
    degrees = graph.degrees()
    for vertex in graph.vertices[degrees != 2]:
        x_lo, y_lo, x_hi, y_hi = _pixel_box(vertex, vertex, INTERSECTION_RADIUS, width, height)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        ys, xs = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
        hit = (xs - vertex[0]) ** 2 + (ys - vertex[1]) ** 2 <= limit
        out[y_lo : y_hi + 1, x_lo : x_hi + 1][hit] = 1.0
    return out


def rasterize_labels(graph: RoadGraph, width: int, height: int) -> ProbMask:
    """Returns the road and intersection label rasters as one two-channel mask."""
    return ProbMask.from_channels(
        rasterize_road_mask(graph, width, height),
        rasterize_intersection_mask(graph, width, height),
    )


class FusionAccumulator:
    """
    Running per-pixel sum and observation count of window masks.

    Fused values are the sum divided by the count; pixels never observed fuse
    to 0. Accumulators over the same extent merge by adding sums and counts.
    """

    def __init__(self, width: int, height: int) -> None:
        _check_extent(width, height)
        self.width = width
        self.height = height
        self.sum: FloatArray = np.zeros((height, width, 2), dtype=np.float64)
        self.count: npt.NDArray[np.int64] = np.zeros((height, width), dtype=np.int64)

    def accumulate(self, x0: int, y0: int, mask: ProbMask) -> None:
        """
        Adds one window observation whose top-left pixel is ``(x0, y0)``.

        Raises:
            ContractError: If the window does not lie inside the accumulator.
        """
        if (
            x0 < 0
            or y0 < 0
            or x0 + mask.width > self.width
            or y0 + mask.height > self.height
        ):
            raise ContractError(
                f"window at ({x0}, {y0}) of size {mask.width}x{mask.height} "
                f"exceeds the {self.width}x{self.height} extent"
            )
        self.sum[y0 : y0 + mask.height, x0 : x0 + mask.width] += mask.data
        self.count[y0 : y0 + mask.height, x0 : x0 + mask.width] += 1

    def merge(self, other: "FusionAccumulator") -> None:
        """Adds another accumulator's observations into this one."""
        if (other.width, other.height) != (self.width, self.height):
            raise ShapeError("cannot merge accumulators of different extents")
        self.sum += other.sum
        self.count += other.count

    def finalize(self) -> ProbMask:
        """Returns the fused mask: mean of observations, 0 where unobserved."""
        counts = self.count[:, :, None]
        fused = np.divide(
            self.sum, counts, out=np.zeros_like(self.sum), where=counts > 0
        )
        return ProbMask(np.clip(fused, 0.0, 1.0).astype(np.float32))


def fuse_masks(
    width: int, height: int, windows: Iterable[Tuple[int, int, ProbMask]]
) -> ProbMask:
    """Fuses ``(x0, y0, mask)`` observations into one mask."""
    accumulator = FusionAccumulator(width, height)
    for x0, y0, mask in windows:
        accumulator.accumulate(x0, y0, mask)
    return accumulator.finalize()
