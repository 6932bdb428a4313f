"""Geometry primitives shared by the raster, label and metric modules.

Coordinates are continuous pixel coordinates with the origin at the center of
the top-left pixel and y growing downward."""

from typing import Optional, Tuple

import numpy as np
import numpy.typing as npt
import shapely

from .data_classes import FeatureMap
from .exceptions import ContractError
from .typing import FloatArray

_EXTENT_TOLERANCE = 1e-9


def inside_extent(points: FloatArray, width: int, height: int) -> npt.NDArray[np.bool_]:
    """
    Tells which points fall inside a ``width`` x ``height`` pixel window.

    The window covers ``[-0.5, width - 0.5] x [-0.5, height - 0.5]``, the outer
    edges of its border pixels.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    lo = -0.5 - _EXTENT_TOLERANCE
    return (  # type: ignore[no-any-return]
        (pts[:, 0] >= lo)
        & (pts[:, 1] >= lo)
        & (pts[:, 0] <= width - 0.5 + _EXTENT_TOLERANCE)
        & (pts[:, 1] <= height - 0.5 + _EXTENT_TOLERANCE)
    )


def bilinear_sample(fmap: FeatureMap, points: npt.ArrayLike) -> FloatArray:
    """
    Samples a feature map bilinearly at window pixel coordinates.

    Pixel ``p`` maps to cell coordinate ``p / scale - 0.5`` so that cell
    centers are exact sample points; coordinates beyond the outermost cell
    centers clamp to the border cells.

    Args:
        fmap (FeatureMap): The feature map to sample.
        points (array-like): One point ``(x, y)`` or an ``(N, 2)`` array.

    Returns:
        np.ndarray: ``(dim,)`` for a single point, otherwise ``(N, dim)``.

    Raises:
        ContractError: If a point lies outside the window covered by the map.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    if not np.all(inside_extent(pts, fmap.width, fmap.height)):
        raise ContractError("sample point lies outside the feature map window")

    cx = np.clip(pts[:, 0] / fmap.scale - 0.5, 0.0, fmap.width_f - 1)
    cy = np.clip(pts[:, 1] / fmap.scale - 0.5, 0.0, fmap.height_f - 1)
    x0 = np.floor(cx).astype(np.int64)
    y0 = np.floor(cy).astype(np.int64)
    x1 = np.minimum(x0 + 1, fmap.width_f - 1)
    y1 = np.minimum(y0 + 1, fmap.height_f - 1)
    fx = (cx - x0)[:, None]
    fy = (cy - y0)[:, None]

    data = fmap.data.astype(np.float64, copy=False)
    out = (
        (1.0 - fx) * (1.0 - fy) * data[y0, x0]
        + fx * (1.0 - fy) * data[y0, x1]
        + (1.0 - fx) * fy * data[y1, x0]
        + fx * fy * data[y1, x1]
    )
    return out[0] if single else out  # type: ignore[no-any-return]


def point_segment_distance_sq(
    points: npt.ArrayLike, a: npt.ArrayLike, b: npt.ArrayLike
) -> FloatArray:
    """Returns squared distances from ``points`` (N, 2) to the segment a-b."""
    # Elementwise arithmetic only, so one point or a million give identical bits.
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    ax, ay = (float(v) for v in np.asarray(a, dtype=np.float64))
    bx, by = (float(v) for v in np.asarray(b, dtype=np.float64))
    ux, uy = bx - ax, by - ay
    length_sq = ux * ux + uy * uy
    px = pts[:, 0] - ax
    py = pts[:, 1] - ay
    if length_sq == 0.0:
        t = np.zeros(len(pts))
    else:
        t = np.clip((px * ux + py * uy) / length_sq, 0.0, 1.0)
    dx = px - t * ux
    dy = py - t * uy
    return dx * dx + dy * dy  # type: ignore[no-any-return]


def clip_segment(
    a: npt.ArrayLike, b: npt.ArrayLike, bounds: Tuple[float, float, float, float]
) -> Optional[Tuple[FloatArray, FloatArray]]:
    """
    Clips segment a-b to the closed rectangle ``(xmin, ymin, xmax, ymax)``.

    Returns:
        The clipped ``(start, end)`` pair, oriented like a-b, or None when the
        segment misses the rectangle or only touches it in a single point.
    """
    start = np.asarray(a, dtype=np.float64)
    end = np.asarray(b, dtype=np.float64)
    clipped = shapely.box(*bounds).intersection(shapely.LineString([start, end]))
    if clipped.is_empty or clipped.geom_type != "LineString" or clipped.length == 0:
        return None
    coords = np.asarray(clipped.coords, dtype=np.float64)
    direction = end - start
    order = np.argsort((coords - start) @ direction)
    first, last = coords[order[0]], coords[order[-1]]
    # Endpoints already inside the box are kept bit-exact.
    if np.allclose(first, start, atol=1e-9):
        first = start
    if np.allclose(last, end, atol=1e-9):
        last = end
    return first, last


def rotate_points_cw(points: FloatArray, width: int, height: int) -> FloatArray:
    """Rotates points of a ``width`` x ``height`` raster by 90 degrees clockwise."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return np.stack([height - 1 - pts[:, 1], pts[:, 0]], axis=1)
