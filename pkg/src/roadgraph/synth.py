"""
Synthetic road scenes, imperfect masks and an analytic feature encoder, so the
whole pipeline can be trained and evaluated without an image model.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from typing import Callable, List, NamedTuple

import numpy as np
import shapely
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.special import erf

from .constants import (
    ENCODER_SEED,
    FEATURE_DIR,
    FEATURE_SCALE,
    GRAPH_FILE,
    INTERSECTION_RADIUS,
    MASK_DIR,
    MASK_FILE,
    META_FILE,
    ROAD_HALF_WIDTH,
    SYNTH_BLUR_SIGMA,
    SYNTH_FEATURE_DIM,
    SYNTH_MERGE_RADIUS,
    WINDOW_FILE_PATTERN,
)
from .data_classes import FeatureMap, ProbMask, RoadGraph, SceneSpec, Window, WindowGrid
from .exceptions import ContractError, DataIOError
from .raster import rasterize_intersection_mask, rasterize_road_mask
from .serialization import (
    load_graph,
    load_mask,
    read_meta,
    save_features,
    save_graph,
    save_mask,
    write_meta,
)
from .typing import FloatArray, SceneMeta

logger = logging.getLogger(__name__)

# Pixels per mean block (or ring spacing) at density 1.
_DENSITY_UNIT = 256.0
# Arc length between ring polyline vertices.
_RING_STEP = 16.0
# Channels of the analytic encoder that are not random projections.
_FIXED_CHANNELS = 8
# Patch sampled under every feature cell: 7 x 7 taps, 4 px apart.
_PATCH_TAPS = np.arange(-3, 4) * 4


def _block_edges(rng: np.random.Generator, extent: int, margin: int, density: float) -> FloatArray:
    blocks = max(1, round(density * extent / _DENSITY_UNIT))
    weights = rng.uniform(0.5, 1.5, size=blocks)
    cuts = np.concatenate([[0.0], np.cumsum(weights) / weights.sum()])
    return margin + cuts * (extent - 1 - 2 * margin)  # type: ignore[no-any-return]


def _grid_lines(spec: SceneSpec, rng: np.random.Generator) -> List[shapely.LineString]:
    xs = _block_edges(rng, spec.width, spec.margin, spec.density)
    ys = _block_edges(rng, spec.height, spec.margin, spec.density)
    gx, gy = np.meshgrid(xs, ys)
    lattice = np.stack([gx, gy], axis=-1)
    if spec.jitter > 0:
        lattice = lattice + rng.normal(0.0, spec.jitter, size=lattice.shape)
    lattice[..., 0] = np.clip(lattice[..., 0], 0, spec.width - 1)
    lattice[..., 1] = np.clip(lattice[..., 1], 0, spec.height - 1)

    lines = []
    rows, cols = lattice.shape[:2]
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                lines.append(shapely.LineString([lattice[r, c], lattice[r, c + 1]]))
            if r + 1 < rows:
                lines.append(shapely.LineString([lattice[r, c], lattice[r + 1, c]]))
    return lines


def _radial_lines(spec: SceneSpec, rng: np.random.Generator) -> List[shapely.LineString]:
    center = np.array([(spec.width - 1) / 2, (spec.height - 1) / 2])
    center += rng.normal(0.0, spec.jitter, size=2)
    reach = min(
        center[0] - spec.margin,
        center[1] - spec.margin,
        spec.width - 1 - spec.margin - center[0],
        spec.height - 1 - spec.margin - center[1],
    )
    rings = max(1, round(spec.density * min(spec.width, spec.height) / (2 * _DENSITY_UNIT)))

    lines = []
    for k in range(rings):
        radius = reach * (k + 1) / (rings + 0.5)
        wobble = rng.uniform(0.0, 0.06)
        lobes = int(rng.integers(2, 5))
        phase = rng.uniform(0, 2 * np.pi)
        count = max(12, math.ceil(2 * np.pi * radius / _RING_STEP))
        theta = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        r = radius * (1.0 + wobble * np.sin(lobes * theta + phase))
        ring = center + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        lines.append(shapely.LineString(np.vstack([ring, ring[:1]])))

    spokes = int(rng.integers(5, 9))
    angles = np.arange(spokes) * 2 * np.pi / spokes + rng.uniform(0, 2 * np.pi)
    angles += rng.normal(0.0, 0.1, size=spokes)
    for angle in angles:
        tip = center + reach * np.array([np.cos(angle), np.sin(angle)])
        lines.append(shapely.LineString([center, tip]))
    return lines


def graph_from_lines(lines: List[shapely.LineString], merge_radius: float) -> RoadGraph:
    """
    Nodes linework at its crossings, merges vertices closer than
    ``merge_radius`` and keeps the largest connected component.
    """
    noded = shapely.unary_union(lines)
    parts = getattr(noded, "geoms", [noded])
    coords: List[FloatArray] = []
    segments: List[List[int]] = []
    start = 0
    for part in parts:
        points = np.asarray(part.coords, dtype=np.float64)
        coords.append(points)
        segments.extend([start + k, start + k + 1] for k in range(len(points) - 1))
        start += len(points)
    vertices = np.concatenate(coords, axis=0)

    # Clusters of nearby vertices collapse onto their lowest-index member.
    pairs = sorted(cKDTree(vertices).query_pairs(merge_radius))
    close = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    n = len(vertices)
    links = coo_matrix((np.ones(len(close)), (close[:, 0], close[:, 1])), shape=(n, n))
    _, cluster = connected_components(links, directed=False)
    representative = np.full(cluster.max() + 1, n)
    np.minimum.at(representative, cluster, np.arange(n))

    ends = representative[cluster[np.asarray(segments, dtype=np.int64).reshape(-1, 2)]]
    ends = ends[ends[:, 0] != ends[:, 1]]
    ends = np.unique(np.sort(ends, axis=1), axis=0)
    if len(ends) == 0:
        return RoadGraph.empty()

    used, inverse = np.unique(ends, return_inverse=True)
    edges = inverse.reshape(-1, 2)
    adjacency = coo_matrix(
        (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(len(used),) * 2
    )
    _, component = connected_components(adjacency, directed=False)
    largest = np.argmax(np.bincount(component))
    keep = np.flatnonzero(component == largest)
    renumber = np.full(len(used), -1, dtype=np.int64)
    renumber[keep] = np.arange(len(keep))
    kept_edges = renumber[edges]
    kept_edges = kept_edges[(kept_edges >= 0).all(axis=1)]
    return RoadGraph(vertices[used[keep]], kept_edges)


def generate_scene(spec: SceneSpec) -> RoadGraph:
    """
    Generates a connected, overpass-free road graph.

    ``grid`` scenes are jittered lattices with random block sizes, ``radial``
    scenes wobbly ring roads crossed by spokes, and ``mixed`` scenes both at
    once. Crossings become vertices and vertices within 2 px are merged.

    Raises:
        ContractError: If the scene ends up with fewer than two vertices.
    """
    rng = np.random.default_rng(spec.seed)
    lines: List[shapely.LineString] = []
    if spec.style in ("grid", "mixed"):
        lines += _grid_lines(spec, rng)
    if spec.style in ("radial", "mixed"):
        lines += _radial_lines(spec, rng)
    graph = graph_from_lines(lines, SYNTH_MERGE_RADIUS) if lines else RoadGraph.empty()
    if graph.num_vertices < 2:
        raise ContractError("scene parameters produce fewer than two vertices")
    logger.debug(
        "%s scene %dx%d: %d vertices, %d edges",
        spec.style, spec.width, spec.height, graph.num_vertices, graph.num_edges,
    )
    return graph


def noisy_masks(
    graph: RoadGraph,
    width: int,
    height: int,
    noise_sigma: float,
    seed: int,
    blur_sigma: float = SYNTH_BLUR_SIGMA,
) -> ProbMask:
    """
    Emulates an imperfect mask decoder.

    The label rasters are blurred with a Gaussian of ``blur_sigma`` pixels,
    rescaled so the centre of a straight road (or an intersection disc) stays
    at 1, overlaid with i.i.d. Gaussian noise and clamped to [0, 1]. With no
    blur and no noise the exact label rasters come back.
    """
    if noise_sigma < 0 or blur_sigma < 0:
        raise ContractError("noise_sigma and blur_sigma must be >= 0")
    road = rasterize_road_mask(graph, width, height).astype(np.float64)
    crossing = rasterize_intersection_mask(graph, width, height).astype(np.float64)
    if blur_sigma > 0:
        road_gain = erf(ROAD_HALF_WIDTH / (blur_sigma * math.sqrt(2.0)))
        crossing_gain = 1.0 - math.exp(-(INTERSECTION_RADIUS**2) / (2 * blur_sigma**2))
        road = ndimage.gaussian_filter(road, blur_sigma) / road_gain
        crossing = ndimage.gaussian_filter(crossing, blur_sigma) / crossing_gain
    channels = np.stack([road, crossing], axis=-1)
    if noise_sigma > 0:
        channels += np.random.default_rng(seed).normal(0.0, noise_sigma, size=channels.shape)
    return ProbMask(np.clip(channels, 0.0, 1.0).astype(np.float32))


def _orientation(road: FloatArray, cells: int, scale: int) -> FloatArray:
    gx = ndimage.sobel(road, axis=1, mode="nearest")
    gy = ndimage.sobel(road, axis=0, mode="nearest")
    tensor = np.stack([gx * gx, gy * gy, gx * gy], axis=-1)
    pooled = tensor.reshape(cells, scale, -1, scale, 3).mean(axis=(1, 3))
    jxx, jyy, jxy = pooled[..., 0], pooled[..., 1], pooled[..., 2]
    trace = jxx + jyy
    safe = np.where(trace > 1e-12, trace, 1.0)
    # The gradient is normal to the road, hence the sign flip.
    cos2 = np.where(trace > 1e-12, -(jxx - jyy) / safe, 0.0)
    sin2 = np.where(trace > 1e-12, -2 * jxy / safe, 0.0)
    return np.stack([sin2, cos2], axis=-1)


def analytic_encoder(
    mask: ProbMask,
    x0: int,
    y0: int,
    size: int,
    seed: int = ENCODER_SEED,
    d_feat: int = SYNTH_FEATURE_DIM,
    scale: int = FEATURE_SCALE,
) -> FeatureMap:
    """
    Encodes the ``size`` x ``size`` window at ``(x0, y0)`` of a scene mask.

    Channels per cell: mean and max road probability, mean and max
    intersection probability, road orientation as ``(sin 2t, cos 2t)`` from
    the structure tensor, the cell centre in window coordinates scaled to
    [-1, 1], then ``d_feat - 8`` fixed random projections (seeded by ``seed``)
    of a 7 x 7 tap patch of both mask channels around the cell centre.

    Args:
        mask (ProbMask): The scene mask.
        x0 (int): Window origin column.
        y0 (int): Window origin row.
        size (int): Window size; a multiple of ``scale``.
        seed (int): Seed of the projection matrix.
        d_feat (int): Number of channels, at least 8.
        scale (int): Pixels per cell.

    Returns:
        FeatureMap: ``(size / scale, size / scale, d_feat)`` float32 features.
    """
    if d_feat < _FIXED_CHANNELS:
        raise ContractError(f"d_feat must be >= {_FIXED_CHANNELS}")
    if size % scale:
        raise ContractError(f"window size {size} is not a multiple of {scale}")
    if x0 < 0 or y0 < 0 or x0 + size > mask.width or y0 + size > mask.height:
        raise ContractError("window lies outside the scene mask")
    cells = size // scale
    window = mask.data[y0 : y0 + size, x0 : x0 + size].astype(np.float64)
    blocks = window.reshape(cells, scale, cells, scale, 2)
    means = blocks.mean(axis=(1, 3))
    maxima = blocks.max(axis=(1, 3))

    centres = (np.arange(cells) + 0.5) / cells * 2.0 - 1.0
    cx, cy = np.meshgrid(centres, centres)

    pixel = np.arange(cells) * scale + scale // 2
    rows = y0 + pixel[:, None, None, None] + _PATCH_TAPS[None, None, :, None]
    cols = x0 + pixel[None, :, None, None] + _PATCH_TAPS[None, None, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    inside = (rows >= 0) & (rows < mask.height) & (cols >= 0) & (cols < mask.width)
    taps = mask.data[np.clip(rows, 0, mask.height - 1), np.clip(cols, 0, mask.width - 1)]
    taps = np.where(inside[..., None], taps, 0.0).reshape(cells, cells, -1)
    projection = np.random.default_rng(seed).normal(
        0.0, 1.0 / math.sqrt(taps.shape[-1]), size=(taps.shape[-1], d_feat - _FIXED_CHANNELS)
    )

    features = np.concatenate(
        [
            means[..., :1],
            maxima[..., :1],
            means[..., 1:],
            maxima[..., 1:],
            _orientation(window[..., 0], cells, scale),
            cx[..., None],
            cy[..., None],
            taps @ projection,
        ],
        axis=-1,
    )
    return FeatureMap(features.astype(np.float32), scale)


def make_encoder(
    seed: int = ENCODER_SEED, d_feat: int = SYNTH_FEATURE_DIM, scale: int = FEATURE_SCALE
) -> Callable[[ProbMask, int, int, int], FeatureMap]:
    """Returns ``analytic_encoder`` bound to one projection seed and width."""
    return partial(analytic_encoder, seed=seed, d_feat=d_feat, scale=scale)


class Scene(NamedTuple):
    """One dataset directory loaded into memory."""

    graph: RoadGraph
    mask: ProbMask
    meta: SceneMeta


def write_dataset(
    directory: str,
    graph: RoadGraph,
    mask: ProbMask,
    grid: WindowGrid,
    seed: int,
    d_feat: int = SYNTH_FEATURE_DIM,
    scale: int = FEATURE_SCALE,
    threads: int = 1,
) -> None:
    """
    Writes a scene in the dataset layout: ``graph.json``, ``mask.rgt``,
    ``meta.txt`` and per-window ``masks/`` and ``feats/`` tensors.
    """
    try:
        os.makedirs(os.path.join(directory, MASK_DIR), exist_ok=True)
        os.makedirs(os.path.join(directory, FEATURE_DIR), exist_ok=True)
    except OSError as e:
        raise DataIOError(f"cannot create {directory!r}: {e.strerror}") from e
    save_graph(os.path.join(directory, GRAPH_FILE), graph)
    save_mask(os.path.join(directory, MASK_FILE), mask)
    write_meta(
        os.path.join(directory, META_FILE),
        {
            "image_width": mask.width,
            "image_height": mask.height,
            "window_size": grid.window_size,
            "count_x": grid.count_x,
            "count_y": grid.count_y,
            "feature_scale": scale,
            "feature_dim": d_feat,
            "seed": seed,
        },
    )

    size = grid.window_size

    def emit(window: Window) -> None:
        name = WINDOW_FILE_PATTERN.format(ix=window.ix, iy=window.iy)
        save_mask(
            os.path.join(directory, MASK_DIR, name),
            mask.crop(window.x0, window.y0, size, size),
        )
        save_features(
            os.path.join(directory, FEATURE_DIR, name),
            analytic_encoder(mask, window.x0, window.y0, size, ENCODER_SEED, d_feat, scale),
        )

    with ThreadPoolExecutor(max_workers=threads) as executor:
        list(executor.map(emit, grid.windows()))
    logger.info("wrote %s: %d windows", directory, len(grid.windows()))


def load_dataset(directory: str) -> Scene:
    """Reads the scene-level files of a dataset directory."""
    return Scene(
        load_graph(os.path.join(directory, GRAPH_FILE)),
        load_mask(os.path.join(directory, MASK_FILE)),
        read_meta(os.path.join(directory, META_FILE)),
    )
