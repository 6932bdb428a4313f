"""
Teacher-forcing training data for the topology decoder: subdivide a ground
truth graph, emulate vertex prediction on it, label candidate edges by a
bounded shortest-distance expansion and augment image-aligned patches.
"""

import logging
import math
import os
from dataclasses import dataclass, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import numpy.typing as npt

from .data_classes import ExtractionConfig, FeatureMap, ProbMask, RoadGraph
from .exceptions import ContractError, DataIOError
from .geometry import clip_segment, rotate_points_cw
from .nms import nms_indices
from .serialization import read_tensor, write_tensor
from .toponet import TopoSample, build_sample
from .typing import FloatArray, IntArray

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator]

SAMPLE_TENSORS = ("sources", "targets", "valid", "offsets", "labels", "points")
SAMPLE_INDEX_FILE = "index.txt"


def subdivide_graph(graph: RoadGraph, max_segment: float) -> RoadGraph:
    """
    Splits every edge longer than ``max_segment`` into ``ceil(L / max_segment)``
    equal pieces.

    Original vertices keep their indices; inserted vertices are appended in
    edge order.
    """
    if max_segment <= 0:
        raise ContractError("max_segment must be > 0")
    vertices: List[FloatArray] = [graph.vertices]
    edges: List[Tuple[int, int]] = []
    next_index = graph.num_vertices
    for (i, j), length in zip(graph.edges.tolist(), graph.edge_lengths().tolist()):
        pieces = math.ceil(length / max_segment)
        if pieces <= 1:
            edges.append((i, j))
            continue
        a, b = graph.vertices[i], graph.vertices[j]
        fractions = np.arange(1, pieces, dtype=np.float64)[:, None] / pieces
        vertices.append(a + fractions * (b - a))
        chain = [i, *range(next_index, next_index + pieces - 1), j]
        edges.extend(zip(chain[:-1], chain[1:]))
        next_index += pieces - 1
    return RoadGraph(
        np.concatenate(vertices, axis=0),
        np.asarray(edges, dtype=np.int64).reshape(-1, 2),
    )


class EmulatedVertices(NamedTuple):
    """Emulated predicted vertices and the subdivision vertex each one sits on."""

    points: FloatArray
    anchors: IntArray


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def emulate_vertex_prediction(
    graph: RoadGraph, cfg: ExtractionConfig, seed: SeedLike
) -> EmulatedVertices:
    """
    Mimics inference-time vertices on a subdivided graph: each vertex gets an
    independent uniform score and the set is suppressed with ``cfg.nms_radius``.
    """
    scores = _rng(seed).uniform(0.0, 1.0, size=graph.num_vertices)
    keep = nms_indices(graph.vertices, scores, cfg.nms_radius)
    return EmulatedVertices(graph.vertices[keep].copy(), keep)


def connectivity_labels(
    graph: Union[RoadGraph, "nx.Graph[int]"],
    anchors: npt.ArrayLike,
    source: int,
    targets: Sequence[int],
    radius: float,
) -> FloatArray:
    """
    Labels which targets are immediate graph neighbours of the source.

    A shortest-distance expansion over ``length``-weighted edges starts at the
    source's anchor, never continues out of another target's anchor and stops
    beyond ``radius``. A target is labelled 1 iff its anchor is reached with a
    distance of at most ``radius``.

    Args:
        graph: The subdivided graph, or its :meth:`RoadGraph.to_networkx` view.
        anchors (array-like): Anchor vertex of every emulated vertex.
        source (int): Emulated vertex index of the source.
        targets (sequence): Emulated vertex indices of the targets.
        radius (float): Expansion limit in pixels.

    Raises:
        ContractError: If the source or a target has no anchor.
    """
    anchor_of = np.asarray(anchors, dtype=np.int64).reshape(-1)
    if not 0 <= source < len(anchor_of):
        raise ContractError(f"source {source} is not anchored on the graph")
    if any(not 0 <= target < len(anchor_of) for target in targets):
        raise ContractError("target is not anchored on the graph")
    network = graph.to_networkx() if isinstance(graph, RoadGraph) else graph

    start = int(anchor_of[source])
    blocked = {int(anchor_of[target]) for target in targets} - {start}

    def weight(u: int, _v: int, data: Dict[str, float]) -> Optional[float]:
        return None if u in blocked else data["length"]

    reached = nx.single_source_dijkstra_path_length(
        network, start, cutoff=radius, weight=weight
    )
    return np.array(
        [1.0 if int(anchor_of[target]) in reached else 0.0 for target in targets]
    )


def make_topo_samples(
    graph: RoadGraph,
    width: int,
    height: int,
    cfg: ExtractionConfig,
    seed: SeedLike,
) -> List[TopoSample]:
    """
    Builds labelled training samples for one patch.

    The graph is subdivided at ``nms_radius / 4``, vertex prediction is
    emulated, and up to ``sources_per_patch`` sources are drawn without
    replacement. Targets and labels come from the unperturbed emulated
    vertices; the decoder inputs then get i.i.d. Gaussian noise of
    ``perturb_sigma`` pixels per coordinate.

    Perturbed coordinates are clamped to the patch extent
    ``[-0.5, size - 0.5]``, since features cannot be sampled outside it. The
    noise is therefore not plain i.i.d. Gaussian for vertices within a few
    sigma of the border, which cannot move past it.
    """
    rng = _rng(seed)
    subdivided = subdivide_graph(graph, cfg.nms_radius / 4.0)
    emulated = emulate_vertex_prediction(subdivided, cfg, rng)
    count = len(emulated.points)
    if count == 0:
        return []
    sources = rng.choice(count, size=min(cfg.sources_per_patch, count), replace=False)

    network = subdivided.to_networkx()
    if cfg.perturb_sigma > 0:
        noise = rng.normal(0.0, cfg.perturb_sigma, size=emulated.points.shape)
        perturbed = emulated.points + noise
        perturbed[:, 0] = np.clip(perturbed[:, 0], -0.5, width - 0.5)
        perturbed[:, 1] = np.clip(perturbed[:, 1], -0.5, height - 0.5)
    else:
        perturbed = emulated.points

    samples = []
    for source in sources.tolist():
        sample = build_sample(emulated.points, source, cfg)
        targets = sample.target_indices[sample.valid].tolist()
        labels = np.zeros(sample.max_neighbors)
        labels[: len(targets)] = connectivity_labels(
            network, emulated.anchors, source, targets, cfg.neighbor_radius
        )
        sample = sample.moved(perturbed[source], perturbed[sample.target_indices])
        samples.append(replace(sample, labels=labels))
    logger.debug(
        "patch %dx%d: %d emulated vertices, %d samples", width, height, count, len(samples)
    )
    return samples


@dataclass(frozen=True)
class PatchBundle:
    """Image-aligned training data: a graph plus optional mask and features."""

    graph: RoadGraph
    width: int
    height: int
    mask: Optional[ProbMask] = None
    features: Optional[FeatureMap] = None

    def __post_init__(self) -> None:
        if self.mask is not None and (self.mask.width, self.mask.height) != (
            self.width,
            self.height,
        ):
            raise ContractError("mask extent differs from the patch extent")
        if self.features is not None and (self.features.width, self.features.height) != (
            self.width,
            self.height,
        ):
            raise ContractError("feature map extent differs from the patch extent")


class Rot90(NamedTuple):
    """Rotation by ``k`` quarter turns clockwise."""

    k: int


class Crop(NamedTuple):
    """Crop to the ``width`` x ``height`` pixels whose top-left pixel is (x, y)."""

    x: int
    y: int
    width: int
    height: int


def _rotate_once(bundle: PatchBundle) -> PatchBundle:
    graph = RoadGraph(
        rotate_points_cw(bundle.graph.vertices, bundle.width, bundle.height),
        bundle.graph.edges,
    )
    mask = None
    if bundle.mask is not None:
        mask = ProbMask(np.rot90(bundle.mask.data, k=-1, axes=(0, 1)))
    features = None
    if bundle.features is not None:
        features = FeatureMap(
            np.rot90(bundle.features.data, k=-1, axes=(0, 1)), bundle.features.scale
        )
    return PatchBundle(graph, bundle.height, bundle.width, mask, features)


def crop_graph(graph: RoadGraph, crop: Crop) -> RoadGraph:
    """
    Restricts a graph to a crop and moves it into crop coordinates.

    Edges crossing the crop boundary are cut there and end in a new vertex.
    """
    bounds = (
        crop.x - 0.5,
        crop.y - 0.5,
        crop.x + crop.width - 0.5,
        crop.y + crop.height - 0.5,
    )
    index_of: Dict[Tuple[float, float], int] = {}
    points: List[Tuple[float, float]] = []

    def vertex(point: FloatArray) -> int:
        key = (float(point[0]), float(point[1]))
        if key not in index_of:
            index_of[key] = len(points)
            points.append(key)
        return index_of[key]

    lo = np.array(bounds[:2])
    hi = np.array(bounds[2:])
    for point in graph.vertices:
        if np.all(point >= lo) and np.all(point <= hi):
            vertex(point)

    edges = set()
    ordered: List[Tuple[int, int]] = []
    for i, j in graph.edges.tolist():
        clipped = clip_segment(graph.vertices[i], graph.vertices[j], bounds)
        if clipped is None:
            continue
        a, b = vertex(clipped[0]), vertex(clipped[1])
        key = (min(a, b), max(a, b))
        if a != b and key not in edges:
            edges.add(key)
            ordered.append((a, b))
    cropped = RoadGraph(
        np.asarray(points, dtype=np.float64).reshape(-1, 2),
        np.asarray(ordered, dtype=np.int64).reshape(-1, 2),
    )
    return cropped.translated(-crop.x, -crop.y)


def _crop(bundle: PatchBundle, crop: Crop) -> PatchBundle:
    if (
        crop.width <= 0
        or crop.height <= 0
        or crop.x < 0
        or crop.y < 0
        or crop.x + crop.width > bundle.width
        or crop.y + crop.height > bundle.height
    ):
        raise ContractError(
            f"crop {tuple(crop)} lies outside the {bundle.width}x{bundle.height} patch"
        )
    mask = None
    if bundle.mask is not None:
        mask = bundle.mask.crop(crop.x, crop.y, crop.width, crop.height)
    features = None
    if bundle.features is not None:
        scale = bundle.features.scale
        if any(value % scale for value in crop):
            raise ContractError(f"crop {tuple(crop)} is not aligned to the feature scale {scale}")
        fx, fy = crop.x // scale, crop.y // scale
        features = FeatureMap(
            bundle.features.data[fy : fy + crop.height // scale, fx : fx + crop.width // scale],
            scale,
        )
    return PatchBundle(
        crop_graph(bundle.graph, crop), crop.width, crop.height, mask, features
    )


def augment_patch(bundle: PatchBundle, op: Union[Rot90, Crop]) -> PatchBundle:
    """
    Transforms a patch's graph, mask and features consistently.

    Raises:
        ContractError: If a crop leaves the patch or, with features present,
            is not aligned to the feature cell grid.
    """
    if isinstance(op, Rot90):
        for _ in range(op.k % 4):
            bundle = _rotate_once(bundle)
        return bundle
    if isinstance(op, Crop):
        return _crop(bundle, op)
    raise TypeError(f"unknown augmentation {op!r}")


def random_patch(
    graph: RoadGraph, mask: ProbMask, size: int, rng: np.random.Generator, align: int = 1
) -> PatchBundle:
    """
    Draws a ``size`` x ``size`` training patch at a random continuous offset,
    rounded to multiples of ``align``, and rotates it by a random number of
    quarter turns.
    """
    if size > mask.width or size > mask.height:
        raise ContractError(f"patch size {size} exceeds the {mask.width}x{mask.height} scene")
    origin = []
    for extent in (mask.width, mask.height):
        top = (extent - size) // align * align
        origin.append(min(top, int(round(rng.uniform(0.0, extent - size) / align)) * align))
    bundle = augment_patch(
        PatchBundle(graph, mask.width, mask.height, mask), Crop(origin[0], origin[1], size, size)
    )
    return augment_patch(bundle, Rot90(int(rng.integers(0, 4))))


def dump_samples(directory: str, samples: Sequence[TopoSample]) -> None:
    """
    Writes labelled samples as RGT1 tensors plus a plain-text ``index.txt``.

    ``points`` holds the source point followed by the target points of each
    sample, shaped ``(B, N + 1, 2)``.
    """
    if not samples:
        raise ContractError("no samples to dump")
    slots = samples[0].max_neighbors
    tensors = {
        "sources": np.array([s.source_index for s in samples], dtype=np.int64),
        "targets": np.stack([s.target_indices for s in samples]).astype(np.int64),
        "valid": np.stack([s.valid for s in samples]).astype(np.uint8),
        "offsets": np.stack([s.offsets for s in samples]).astype(np.float64),
        "labels": np.stack(
            [s.labels if s.labels is not None else np.zeros(slots) for s in samples]
        ).astype(np.float64),
        "points": np.stack(
            [np.vstack([s.source_point[None], s.target_points]) for s in samples]
        ).astype(np.float64),
    }
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"cannot create {directory!r}: {e.strerror}") from e
    for name, array in tensors.items():
        write_tensor(os.path.join(directory, f"{name}.rgt"), array)
    lines = [f"count = {len(samples)}", f"max_neighbors = {slots}"]
    lines += [f"tensor = {name}.rgt" for name in SAMPLE_TENSORS]
    with open(os.path.join(directory, SAMPLE_INDEX_FILE), "w", encoding="utf-8") as file:
        file.write("\n".join(lines) + "\n")


def load_samples(directory: str) -> List[TopoSample]:
    """Reads samples written by :func:`dump_samples`."""
    arrays = {
        name: read_tensor(os.path.join(directory, f"{name}.rgt")) for name in SAMPLE_TENSORS
    }
    valid = arrays["valid"].astype(bool)
    return [
        TopoSample(
            source_index=int(arrays["sources"][b]),
            target_indices=arrays["targets"][b],
            valid=valid[b],
            offsets=arrays["offsets"][b],
            source_point=arrays["points"][b, 0],
            target_points=arrays["points"][b, 1:],
            labels=arrays["labels"][b],
        )
        for b in range(len(valid))
    ]
