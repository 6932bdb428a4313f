"""Data models for roadgraph.

All value types validate themselves in ``__post_init__`` and are treated as
immutable after construction: their arrays are copied and marked read-only,
so they can be shared between worker threads without locking."""

# pylint: disable=too-few-public-methods,too-many-instance-attributes

import argparse
from dataclasses import dataclass, field
from typing import Any, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import numpy.typing as npt

from .constants import (
    APLS_PAIR_COUNT,
    APLS_SNAP_RADIUS,
    DEFAULT_EDGE_THRESHOLD,
    DEFAULT_MAX_NEIGHBORS,
    DEFAULT_NEIGHBOR_RADIUS,
    DEFAULT_NMS_RADIUS,
    DEFAULT_PERTURB_SIGMA,
    DEFAULT_SOURCES_PER_PATCH,
    DEFAULT_THRESHOLD,
    DEFAULT_WINDOW_SIZE,
    FEATURE_SCALE,
    FFN_MULTIPLIER,
    LEARNING_RATE,
    NUM_HEADS,
    NUM_LAYERS,
    SYNTH_MIN_EXTENT,
    TOPO_MATCH_RADIUS,
    TOPO_PROPAGATION_RADIUS,
    TOPO_SAMPLE_INTERVAL,
    TOPO_SEED_COUNT,
)
from .exceptions import ContractError, ShapeError
from .typing import FloatArray, IntArray, SceneStyle, TopologyMode


def _frozen(array: npt.NDArray[Any]) -> npt.NDArray[Any]:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class RoadGraph:
    """
    A vectorized road network: 2D vertices in continuous pixel coordinates
    (origin at the top-left pixel center, y down) and undirected edges given
    as vertex-index pairs.
    """

    vertices: FloatArray
    edges: IntArray

    def __post_init__(self) -> None:
        vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 2)
        edges = np.array(self.edges, dtype=np.int64).reshape(-1, 2)

        if not np.all(np.isfinite(vertices)):
            raise ContractError("graph vertices must be finite")
        if len(edges) > 0:
            if edges.min() < 0 or edges.max() >= len(vertices):
                raise ContractError("graph edge refers to a missing vertex")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ContractError("graph contains a self-loop")
            canonical = np.sort(edges, axis=1)
            if len(np.unique(canonical, axis=0)) != len(canonical):
                raise ContractError("graph contains a duplicate edge")

        object.__setattr__(self, "vertices", _frozen(vertices))
        object.__setattr__(self, "edges", _frozen(edges))

    @classmethod
    def empty(cls) -> "RoadGraph":
        """Returns a graph with no vertices and no edges."""
        return cls(np.zeros((0, 2)), np.zeros((0, 2), dtype=np.int64))

    @classmethod
    def from_lists(
        cls,
        vertices: Sequence[Sequence[float]],
        edges: Sequence[Sequence[int]] = (),
    ) -> "RoadGraph":
        """Builds a graph from plain Python lists."""
        return cls(
            np.asarray(vertices, dtype=np.float64).reshape(-1, 2),
            np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        )

    @property
    def num_vertices(self) -> int:
        """Number of vertices."""
        return int(self.vertices.shape[0])

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return int(self.edges.shape[0])

    def degrees(self) -> IntArray:
        """Returns the degree of every vertex."""
        return np.bincount(
            self.edges.reshape(-1), minlength=self.num_vertices
        ).astype(np.int64)

    def edge_lengths(self) -> FloatArray:
        """Returns the Euclidean length of every edge."""
        delta = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(delta[:, 0], delta[:, 1])

    def total_length(self) -> float:
        """Returns the summed length of all edges."""
        return float(self.edge_lengths().sum())

    def to_networkx(self) -> "nx.Graph[int]":
        """Returns an undirected networkx graph with ``length`` edge weights."""
        graph: "nx.Graph[int]" = nx.Graph()
        graph.add_nodes_from(range(self.num_vertices))
        for (i, j), length in zip(self.edges.tolist(), self.edge_lengths().tolist()):
            graph.add_edge(i, j, length=length)
        return graph

    def translated(self, dx: float, dy: float) -> "RoadGraph":
        """Returns a copy with every vertex shifted by ``(dx, dy)``."""
        return RoadGraph(self.vertices + np.array([dx, dy]), self.edges)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RoadGraph):
            return NotImplemented
        return bool(
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.edges, other.edges)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class ProbMask:
    """
    Two-channel per-pixel probability raster, shaped ``(height, width, 2)``.
    Channel 0 is the road probability, channel 1 the intersection probability.
    """

    data: npt.NDArray[np.float32]

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[2] != 2:
            raise ShapeError(f"mask must be shaped (H, W, 2), got {data.shape}")
        if data.size and (
            not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0
        ):
            raise ContractError("mask probabilities must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def zeros(cls, width: int, height: int) -> "ProbMask":
        """Returns an all-zero mask."""
        return cls(np.zeros((height, width, 2), dtype=np.float32))

    @classmethod
    def from_channels(
        cls, road: npt.NDArray[Any], intersection: npt.NDArray[Any]
    ) -> "ProbMask":
        """Stacks a road raster and an intersection raster into a mask."""
        return cls(np.stack([road, intersection], axis=-1).astype(np.float32))

    @property
    def width(self) -> int:
        """Width in pixels."""
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        """Height in pixels."""
        return int(self.data.shape[0])

    @property
    def road(self) -> npt.NDArray[np.float32]:
        """Road channel."""
        return self.data[:, :, 0]

    @property
    def intersection(self) -> npt.NDArray[np.float32]:
        """Intersection channel."""
        return self.data[:, :, 1]

    def crop(self, x: int, y: int, width: int, height: int) -> "ProbMask":
        """Returns the ``width`` x ``height`` sub-mask whose top-left pixel is (x, y)."""
        if x < 0 or y < 0 or x + width > self.width or y + height > self.height:
            raise ContractError("crop lies outside the mask")
        return ProbMask(self.data[y : y + height, x : x + width])


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """
    Dense feature raster shaped ``(height_f, width_f, dim)``; each cell covers
    ``scale`` x ``scale`` pixels of the window it was computed for.
    """

    data: npt.NDArray[np.floating[Any]]
    scale: int = FEATURE_SCALE

    def __post_init__(self) -> None:
        data = np.array(self.data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        if data.ndim != 3:
            raise ShapeError(f"feature map must be shaped (Hf, Wf, D), got {data.shape}")
        if not isinstance(self.scale, int) or self.scale <= 0:
            raise ContractError("feature scale must be a positive int")
        if not np.all(np.isfinite(data)):
            raise ContractError("feature map values must be finite")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def width_f(self) -> int:
        """Width in cells."""
        return int(self.data.shape[1])

    @property
    def height_f(self) -> int:
        """Height in cells."""
        return int(self.data.shape[0])

    @property
    def dim(self) -> int:
        """Number of feature channels."""
        return int(self.data.shape[2])

    @property
    def width(self) -> int:
        """Width of the covered window in pixels."""
        return self.width_f * self.scale

    @property
    def height(self) -> int:
        """Height of the covered window in pixels."""
        return self.height_f * self.scale


@dataclass
class ExtractionConfig:
    """
    Parameters of vertex extraction and topology sampling.

    ``threshold`` is the mask probability threshold t, ``nms_radius`` the
    suppression radius d_v, ``neighbor_radius`` R_nbr and ``max_neighbors``
    N_nbr. Distances are in pixels. With ``use_intersections=False``
    vertices come from the road channel alone.
    """

    threshold: float = DEFAULT_THRESHOLD
    nms_radius: float = DEFAULT_NMS_RADIUS
    neighbor_radius: float = DEFAULT_NEIGHBOR_RADIUS
    max_neighbors: int = DEFAULT_MAX_NEIGHBORS
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD
    perturb_sigma: float = DEFAULT_PERTURB_SIGMA
    sources_per_patch: int = DEFAULT_SOURCES_PER_PATCH
    use_intersections: bool = True

    @staticmethod
    def validate_open_unit(param_name: str, param_value: float) -> float:
        """
        Validates that a probability parameter lies strictly inside (0, 1).

        Args:
            param_name (str): The name of the parameter.
            param_value (float): The value of the parameter.

        Returns:
            float: The validated parameter.
        """
        if not isinstance(param_value, (int, float)):
            raise TypeError(f"{param_name} must be float")
        if not 0.0 < param_value < 1.0:
            raise ContractError(f"{param_name} must lie in (0, 1), got {param_value}")
        return float(param_value)

    def __post_init__(self) -> None:
        self.threshold = self.validate_open_unit("threshold", self.threshold)
        self.edge_threshold = self.validate_open_unit(
            "edge_threshold", self.edge_threshold
        )
        if self.nms_radius <= 0:
            raise ContractError("nms_radius must be > 0")
        if self.neighbor_radius <= self.nms_radius:
            raise ContractError("neighbor_radius must exceed nms_radius")
        if not isinstance(self.max_neighbors, int) or self.max_neighbors < 1:
            raise ContractError("max_neighbors must be an int >= 1")
        if self.perturb_sigma < 0:
            raise ContractError("perturb_sigma must be >= 0")
        if not isinstance(self.sources_per_patch, int) or self.sources_per_patch < 1:
            raise ContractError("sources_per_patch must be an int >= 1")
        if not isinstance(self.use_intersections, bool):
            raise TypeError("use_intersections must be bool")


class Window(NamedTuple):
    """One sliding window: grid index and pixel origin."""

    ix: int
    iy: int
    x0: int
    y0: int


def window_origins(extent: int, window_size: int, count: int) -> Tuple[int, ...]:
    """
    Returns evenly spaced window origins along one axis.

    Origin k is ``round(k * (extent - window_size) / (count - 1))`` with halves
    rounded up, computed in integer arithmetic; a single window sits at 0.
    """
    if count < 1:
        raise ContractError("window count must be >= 1")
    if count == 1:
        return (0,)
    span = extent - window_size
    denominator = 2 * (count - 1)
    return tuple((2 * k * span + (count - 1)) // denominator for k in range(count))


@dataclass(frozen=True)
class WindowGrid:
    """Evenly spaced, overlapping sliding windows tiling an image."""

    image_width: int
    image_height: int
    window_size: int = DEFAULT_WINDOW_SIZE
    count_x: int = 1
    count_y: int = 1

    def __post_init__(self) -> None:
        if self.count_x < 1 or self.count_y < 1:
            raise ContractError("window counts must be >= 1")
        if self.window_size <= 0:
            raise ContractError("window_size must be > 0")
        if self.window_size > self.image_width or self.window_size > self.image_height:
            raise ContractError("window_size exceeds the image extent")
        for extent, origins in (
            (self.image_width, self.origins_x),
            (self.image_height, self.origins_y),
        ):
            ends = [origin + self.window_size for origin in origins]
            gaps = [b - a for a, b in zip(ends[:-1], origins[1:])]
            if ends[-1] < extent or any(gap > 0 for gap in gaps):
                raise ContractError("windows do not cover every pixel of the image")

    @property
    def origins_x(self) -> Tuple[int, ...]:
        """Window origins along x."""
        return window_origins(self.image_width, self.window_size, self.count_x)

    @property
    def origins_y(self) -> Tuple[int, ...]:
        """Window origins along y."""
        return window_origins(self.image_height, self.window_size, self.count_y)

    @property
    def overlap(self) -> int:
        """Smallest overlap between neighbouring windows, in pixels."""
        overlaps = [
            self.window_size - (b - a)
            for origins in (self.origins_x, self.origins_y)
            for a, b in zip(origins[:-1], origins[1:])
        ]
        return min(overlaps) if overlaps else self.window_size

    def windows(self) -> List[Window]:
        """Returns all windows in row-major order."""
        return [
            Window(ix, iy, x0, y0)
            for iy, y0 in enumerate(self.origins_y)
            for ix, x0 in enumerate(self.origins_x)
        ]

    def __iter__(self) -> Iterator[Window]:
        return iter(self.windows())


@dataclass
class TopoNetConfig:
    """Architecture of the topology decoder."""

    d_feat: int
    num_heads: int = NUM_HEADS
    num_layers: int = NUM_LAYERS
    ffn_multiplier: int = FFN_MULTIPLIER
    use_offsets: bool = True
    use_target_features: bool = True
    offset_scale: float = DEFAULT_NEIGHBOR_RADIUS

    def __post_init__(self) -> None:
        if self.d_feat < 1 or self.num_heads < 1:
            raise ContractError("d_feat and num_heads must be >= 1")
        if self.d_feat % self.num_heads != 0:
            raise ShapeError(
                f"num_heads ({self.num_heads}) must divide d_feat ({self.d_feat})"
            )
        if self.num_layers < 0 or self.ffn_multiplier < 1:
            raise ContractError("num_layers must be >= 0 and ffn_multiplier >= 1")
        if self.offset_scale <= 0:
            raise ContractError("offset_scale must be > 0")

    @property
    def input_dim(self) -> int:
        """Width of the concatenated (source, target, offset) input."""
        return 2 * self.d_feat + 2


@dataclass
class TrainConfig:
    """Hyperparameters of topology decoder training."""

    steps: int = 2000
    learning_rate: float = LEARNING_RATE
    seed: int = 0
    log_every: int = 100

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ContractError("steps must be >= 0")
        if self.learning_rate < 0:
            raise ContractError("learning_rate must be >= 0")
        if self.log_every < 1:
            raise ContractError("log_every must be >= 1")


@dataclass
class TopoParams:
    """Parameters of the TOPO metric, in pixels."""

    match_radius: float = TOPO_MATCH_RADIUS
    propagation_radius: float = TOPO_PROPAGATION_RADIUS
    sample_interval: float = TOPO_SAMPLE_INTERVAL
    seed_count: int = TOPO_SEED_COUNT
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.match_radius, self.propagation_radius, self.sample_interval) <= 0:
            raise ContractError("TOPO radii and interval must be > 0")
        if self.seed_count < 1:
            raise ContractError("seed_count must be >= 1")


@dataclass
class AplsParams:
    """Parameters of the APLS metric."""

    snap_radius: float = APLS_SNAP_RADIUS
    pair_count: int = APLS_PAIR_COUNT
    seed: int = 0

    def __post_init__(self) -> None:
        if self.snap_radius <= 0:
            raise ContractError("snap_radius must be > 0")
        if self.pair_count < 1:
            raise ContractError("pair_count must be >= 1")


@dataclass
class SceneSpec:
    """
    Recipe for a synthetic road scene. ``density`` is the mean number of
    lattice blocks (or ring roads) per 256 pixels; ``jitter`` is the standard
    deviation of lattice vertex displacement in pixels.
    """

    width: int
    height: int
    style: SceneStyle = "grid"
    density: float = 2.0
    jitter: float = 3.0
    seed: int = 0
    margin: int = field(default=16)

    def __post_init__(self) -> None:
        if self.width < SYNTH_MIN_EXTENT or self.height < SYNTH_MIN_EXTENT:
            raise ContractError(f"scene extent must be >= {SYNTH_MIN_EXTENT} px")
        if self.style not in ("grid", "radial", "mixed"):
            raise ContractError(f"unknown scene style '{self.style}'")
        if self.density <= 0 or self.jitter < 0:
            raise ContractError("density must be > 0 and jitter >= 0")


class UtilArgs(argparse.Namespace):
    """CLI arguments."""

    command: str
    config: Optional[str]
    seed: int
    threads: int
    log_level: str
    verbose: bool
    # synth
    out: str
    width: int
    height: int
    style: SceneStyle
    density: float
    jitter: float
    noise_sigma: float
    blur_sigma: float
    scenes: int
    feature_dim: int
    # rasterize / extract / render
    graph: str
    mask: Optional[str]
    gt: Optional[str]
    # shared extraction flags
    threshold: float
    nms_radius: float
    neighbor_radius: float
    max_neighbors: int
    edge_threshold: str
    perturb_sigma: float
    sources_per_patch: int
    no_intersections: bool
    # train-topo
    data: List[str]
    steps: int
    lr: float
    layers: int
    heads: int
    no_offsets: bool
    no_target_features: bool
    val_fraction: float
    patches: int
    patch_size: int
    dump_samples: Optional[str]
    # infer
    params: str
    dataset: Optional[str]
    masks: Optional[str]
    feats: Optional[str]
    meta: Optional[str]
    window_size: Optional[int]
    grid_x: Optional[int]
    grid_y: Optional[int]
    topology: TopologyMode
    # eval
    pred: str
    match_radius: float
    propagation_radius: float
    sample_interval: float
    seed_count: int
    snap_radius: float
    pair_count: int
    json: Optional[str]
    per_seed: bool
