"""
Sliding-window inference: fuse per-window masks, extract global vertices,
score candidate edges in every window and average the votes into one graph.
"""

import logging
import math
import os
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import numpy.typing as npt
from typing_extensions import Protocol

from .constants import FEATURE_DIR, FEATURE_SCALE, MASK_DIR, WINDOW_FILE_PATTERN
from .data_classes import (
    ExtractionConfig,
    FeatureMap,
    ProbMask,
    RoadGraph,
    Window,
    WindowGrid,
)
from .exceptions import ContractError, RoadGraphException, WindowProviderError
from .geometry import inside_extent
from .nms import extract_vertices
from .pathfind import RoadCostField
from .raster import FusionAccumulator
from .serialization import load_features, load_mask
from .toponet import TopoNet, TopoSample, build_sample, predict
from .typing import FloatArray, SweepRow, TopologyMode, WindowKey

logger = logging.getLogger(__name__)

T = TypeVar("T")

# Samples scored per decoder call.
PREDICT_BATCH = 256


def window_count(extent: int, window_size: int, overlap: float) -> int:
    """Smallest window count along one axis whose neighbours overlap by ``overlap`` px."""
    if window_size >= extent:
        return 1
    stride = window_size - overlap
    if stride <= 0:
        raise ContractError("overlap must be smaller than the window size")
    return int(math.ceil((extent - window_size) / stride)) + 1


def plan_windows(
    image_width: int,
    image_height: int,
    window_size: int,
    count_x: int,
    count_y: int,
    neighbor_radius: Optional[float] = None,
) -> WindowGrid:
    """
    Plans an evenly spaced grid of overlapping windows.

    Logs a warning when neighbouring windows overlap by less than
    ``neighbor_radius``, since vertex pairs straddling such a seam may never
    be observed together.
    """
    grid = WindowGrid(image_width, image_height, window_size, count_x, count_y)
    if (
        neighbor_radius is not None
        and max(count_x, count_y) > 1
        and grid.overlap < neighbor_radius
    ):
        logger.warning(
            "window overlap %d px is smaller than the neighbour radius %g px",
            grid.overlap,
            neighbor_radius,
        )
    return grid


class WindowProvider(Protocol):
    """Source of per-window masks and feature maps."""

    def load_mask(self, ix: int, iy: int) -> ProbMask:
        """Returns the probability mask of window (ix, iy)."""

    def load_features(self, ix: int, iy: int) -> FeatureMap:
        """Returns the feature map of window (ix, iy)."""


class DirectoryProvider:
    """Reads ``masks/win_{ix}_{iy}.rgt`` and ``feats/win_{ix}_{iy}.rgt`` files."""

    def __init__(
        self,
        mask_dir: str,
        feature_dir: str,
        feature_scale: int = FEATURE_SCALE,
    ) -> None:
        self.mask_dir = mask_dir
        self.feature_dir = feature_dir
        self.feature_scale = feature_scale

    @classmethod
    def from_dataset(cls, root: str, feature_scale: int = FEATURE_SCALE) -> "DirectoryProvider":
        """Uses the ``masks`` and ``feats`` subdirectories of a dataset directory."""
        return cls(
            os.path.join(root, MASK_DIR), os.path.join(root, FEATURE_DIR), feature_scale
        )

    def load_mask(self, ix: int, iy: int) -> ProbMask:
        return load_mask(
            os.path.join(self.mask_dir, WINDOW_FILE_PATTERN.format(ix=ix, iy=iy))
        )

    def load_features(self, ix: int, iy: int) -> FeatureMap:
        return load_features(
            os.path.join(self.feature_dir, WINDOW_FILE_PATTERN.format(ix=ix, iy=iy)),
            self.feature_scale,
        )


Encoder = Callable[[ProbMask, int, int, int], FeatureMap]


class SceneProvider:
    """
    Cuts windows out of one in-memory scene mask and encodes them on demand.

    ``encoder(mask, x0, y0, size)`` turns the scene mask into the feature map
    of the window whose top-left pixel is ``(x0, y0)``.
    """

    def __init__(self, mask: ProbMask, grid: WindowGrid, encoder: Encoder) -> None:
        if (mask.width, mask.height) != (grid.image_width, grid.image_height):
            raise ContractError("scene mask extent differs from the window grid")
        self.mask = mask
        self.grid = grid
        self.encoder = encoder

    def _origin(self, ix: int, iy: int) -> Tuple[int, int]:
        try:
            return self.grid.origins_x[ix], self.grid.origins_y[iy]
        except IndexError as e:
            raise ContractError("window index outside the grid") from e

    def load_mask(self, ix: int, iy: int) -> ProbMask:
        x0, y0 = self._origin(ix, iy)
        size = self.grid.window_size
        return self.mask.crop(x0, y0, size, size)

    def load_features(self, ix: int, iy: int) -> FeatureMap:
        x0, y0 = self._origin(ix, iy)
        return self.encoder(self.mask, x0, y0, self.grid.window_size)


class FeatureCache:
    """
    Keyed store of per-window feature maps in front of a provider, so each
    window is encoded or read once. Safe to share between worker threads:
    a thread missing a window that another thread is already loading waits
    for that load, so ``misses`` counts provider calls exactly.
    """

    def __init__(self, provider: WindowProvider) -> None:
        self.provider = provider
        self.hits = 0
        self.misses = 0
        self._store: Dict[WindowKey, "Future[FeatureMap]"] = {}
        self._lock = threading.Lock()

    def load_mask(self, ix: int, iy: int) -> ProbMask:
        return self.provider.load_mask(ix, iy)

    def load_features(self, ix: int, iy: int) -> FeatureMap:
        with self._lock:
            pending = self._store.get((ix, iy))
            if pending is not None:
                self.hits += 1
            else:
                self.misses += 1
                loading: "Future[FeatureMap]" = Future()
                self._store[(ix, iy)] = loading
        if pending is not None:
            return pending.result()

        try:
            fmap = self.provider.load_features(ix, iy)
        except BaseException as e:
            with self._lock:
                del self._store[(ix, iy)]
            loading.set_exception(e)
            raise
        loading.set_result(fmap)
        return fmap

    def __len__(self) -> int:
        return len(self._store)


class ScoredEdgeAccumulator:
    """
    Running sum and observation count of edge probabilities per unordered
    vertex pair. Accumulators merge by adding sums and counts.
    """

    def __init__(self) -> None:
        self.entries: Dict[Tuple[int, int], List[float]] = {}

    def add(self, i: int, j: int, probability: float) -> None:
        """Records one observation of pair (i, j)."""
        if i == j:
            raise ContractError("an edge needs two distinct vertices")
        key = (i, j) if i < j else (j, i)
        entry = self.entries.setdefault(key, [0.0, 0.0])
        entry[0] += probability
        entry[1] += 1

    def merge(self, other: "ScoredEdgeAccumulator") -> None:
        """Adds another accumulator's observations into this one."""
        for key, (total, count) in other.entries.items():
            entry = self.entries.setdefault(key, [0.0, 0.0])
            entry[0] += total
            entry[1] += count

    def probabilities(self) -> Dict[Tuple[int, int], float]:
        """Mean probability of every observed pair."""
        return {key: total / count for key, (total, count) in self.entries.items()}

    def finalize(self, vertices: FloatArray, threshold: float) -> RoadGraph:
        """Keeps pairs whose mean probability is at least ``threshold``."""
        edges = sorted(
            key for key, probability in self.probabilities().items() if probability >= threshold
        )
        return RoadGraph(vertices, np.asarray(edges, dtype=np.int64).reshape(-1, 2))

    def __len__(self) -> int:
        return len(self.entries)


def _guarded(window: Window, action: Callable[[], T]) -> T:
    try:
        return action()
    except WindowProviderError:
        raise
    except (RoadGraphException, OSError, ValueError) as e:
        raise WindowProviderError(window.ix, window.iy, str(e)) from e


def fuse_windows(provider: WindowProvider, grid: WindowGrid, threads: int = 1) -> ProbMask:
    """Loads every window mask and averages them into one image-sized mask."""
    size = grid.window_size

    def load(window: Window) -> ProbMask:
        mask = _guarded(window, lambda: provider.load_mask(window.ix, window.iy))
        if (mask.width, mask.height) != (size, size):
            raise WindowProviderError(
                window.ix, window.iy, f"mask is {mask.width}x{mask.height}, expected {size}x{size}"
            )
        return mask

    accumulator = FusionAccumulator(grid.image_width, grid.image_height)
    with ThreadPoolExecutor(max_workers=threads) as executor:
        for window, mask in zip(grid.windows(), executor.map(load, grid.windows())):
            accumulator.accumulate(window.x0, window.y0, mask)
    return accumulator.finalize()


def window_sources(
    local: FloatArray, grid: WindowGrid, window: Window, margin: float
) -> npt.NDArray[np.int64]:
    """
    Returns the vertices a window queries as sources.

    A source lies strictly inside the window and at least ``margin`` pixels
    from every window side that is not also an image side.
    """
    size = grid.window_size
    lo_x = -0.5 + (margin if window.x0 > 0 else 0.0)
    lo_y = -0.5 + (margin if window.y0 > 0 else 0.0)
    hi_x = size - 0.5 - (margin if window.x0 + size < grid.image_width else 0.0)
    hi_y = size - 0.5 - (margin if window.y0 + size < grid.image_height else 0.0)
    ok = (
        (local[:, 0] > -0.5)
        & (local[:, 1] > -0.5)
        & (local[:, 0] < size - 0.5)
        & (local[:, 1] < size - 0.5)
        & (local[:, 0] >= lo_x)
        & (local[:, 1] >= lo_y)
        & (local[:, 0] <= hi_x)
        & (local[:, 1] <= hi_y)
    )
    return np.flatnonzero(ok)


def score_window(
    provider: WindowProvider,
    grid: WindowGrid,
    window: Window,
    net: TopoNet,
    vertices: FloatArray,
    cfg: ExtractionConfig,
) -> ScoredEdgeAccumulator:
    """Scores every source of one window against the targets inside it."""
    accumulator = ScoredEdgeAccumulator()
    local = vertices - np.array([window.x0, window.y0], dtype=np.float64)
    sources = window_sources(local, grid, window, cfg.nms_radius)
    if len(sources) == 0:
        return accumulator
    inside = inside_extent(local, grid.window_size, grid.window_size)
    samples: List[TopoSample] = [
        sample
        for sample in (build_sample(local, int(s), cfg, candidates=inside) for s in sources)
        if sample.num_valid > 0
    ]
    if not samples:
        return accumulator

    fmap = _guarded(window, lambda: provider.load_features(window.ix, window.iy))
    if (fmap.width, fmap.height) != (grid.window_size, grid.window_size):
        raise WindowProviderError(
            window.ix, window.iy, f"feature map covers {fmap.width}x{fmap.height} px"
        )
    for start in range(0, len(samples), PREDICT_BATCH):
        batch = samples[start : start + PREDICT_BATCH]
        probabilities = predict(net, fmap, batch)
        for sample, row in zip(batch, probabilities):
            for target, probability in zip(
                sample.target_indices[sample.valid].tolist(), row[sample.valid].tolist()
            ):
                accumulator.add(sample.source_index, target, probability)
    return accumulator


def score_edges(
    provider: WindowProvider,
    grid: WindowGrid,
    net: TopoNet,
    vertices: FloatArray,
    cfg: ExtractionConfig,
    threads: int = 1,
    order: Optional[Sequence[Window]] = None,
) -> ScoredEdgeAccumulator:
    """
    Runs :func:`score_window` over all windows and merges the votes in the
    given window order (row-major by default).
    """
    windows = list(order) if order is not None else grid.windows()
    total = ScoredEdgeAccumulator()
    with ThreadPoolExecutor(max_workers=threads) as executor:
        for partial in executor.map(
            lambda window: score_window(provider, grid, window, net, vertices, cfg), windows
        ):
            total.merge(partial)
    return total


def astar_edges(
    mask: ProbMask, vertices: FloatArray, cfg: ExtractionConfig, threads: int = 1
) -> ScoredEdgeAccumulator:
    """
    Scores every source against its candidate targets by path search over the
    fused road map (see :class:`RoadCostField`), merging in source order.
    """
    field = RoadCostField(mask, vertices, cfg)

    def score_source(source: int) -> List[Tuple[int, float]]:
        sample = build_sample(vertices, source, cfg)
        targets = sample.target_indices[sample.valid].tolist()
        return [(target, field.score(source, target)) for target in targets]

    total = ScoredEdgeAccumulator()
    with ThreadPoolExecutor(max_workers=threads) as executor:
        for source, scored in enumerate(executor.map(score_source, range(len(vertices)))):
            for target, probability in scored:
                total.add(source, target, probability)
    return total


def infer_graph(
    provider: WindowProvider,
    grid: WindowGrid,
    net: Optional[TopoNet],
    cfg: ExtractionConfig,
    edge_threshold: Optional[float] = None,
    threads: int = 1,
    topology: TopologyMode = "decoder",
) -> RoadGraph:
    """
    Extracts the road graph of a whole image from its windows.

    Args:
        provider (WindowProvider): Per-window masks and feature maps.
        grid (WindowGrid): The window layout.
        net (TopoNet, optional): The topology decoder; unused with ``astar``.
        cfg (ExtractionConfig): Extraction parameters.
        edge_threshold (float, optional): Overrides ``cfg.edge_threshold``.
        threads (int): Worker threads for both passes.
        topology (str): ``decoder`` scores pairs with the network in every
            window; ``astar`` scores them by path search over the fused mask.

    Returns:
        RoadGraph: Vertices in extraction order and the edges whose averaged
        probability reaches the edge threshold.

    Raises:
        WindowProviderError: If a provider fails; the message names the window.
    """
    if threads < 1:
        raise ContractError("threads must be >= 1")
    if topology not in ("decoder", "astar"):
        raise ContractError(f"unknown topology mode '{topology}'")
    if topology == "decoder" and net is None:
        raise ContractError("decoder topology needs a network")
    threshold = cfg.edge_threshold if edge_threshold is None else edge_threshold
    cache = provider if isinstance(provider, FeatureCache) else FeatureCache(provider)

    started = time.perf_counter()
    mask = fuse_windows(cache, grid, threads)
    vertices = extract_vertices(mask, cfg).vertices
    logger.info(
        "pass 1: fused %d windows, %d vertices in %.2fs",
        len(grid.windows()),
        len(vertices),
        time.perf_counter() - started,
    )
    if len(vertices) == 0:
        return RoadGraph.empty()

    started = time.perf_counter()
    if net is None or topology == "astar":
        votes = astar_edges(mask, vertices, cfg, threads)
    else:
        votes = score_edges(cache, grid, net, vertices, cfg, threads)
    graph = votes.finalize(vertices, threshold)
    logger.info(
        "pass 2 (%s): %d scored pairs, %d edges at threshold %g in %.2fs "
        "(feature cache: %d hits, %d misses)",
        topology,
        len(votes),
        graph.num_edges,
        threshold,
        time.perf_counter() - started,
        cache.hits,
        cache.misses,
    )
    return graph


def sweep_threshold(
    scores: npt.ArrayLike, labels: npt.ArrayLike, candidates: Sequence[float]
) -> Tuple[float, List[SweepRow]]:
    """
    Picks the candidate threshold with the highest F1 score.

    A score is a predicted positive when it is at least the threshold;
    precision is 0 when nothing is predicted positive. Ties go to the
    smallest threshold.

    Returns:
        tuple: The best threshold and one row per candidate, in candidate order.

    Raises:
        ContractError: If there is no positive label or no candidate.
    """
    values = np.asarray(scores, dtype=np.float64).reshape(-1)
    truth = np.asarray(labels).reshape(-1).astype(bool)
    if len(values) != len(truth):
        raise ContractError("scores and labels differ in length")
    if not truth.any():
        raise ContractError("threshold sweep needs at least one positive label")
    if len(candidates) == 0:
        raise ContractError("threshold sweep needs at least one candidate")

    rows: List[SweepRow] = []
    for threshold in candidates:
        predicted = values >= threshold
        true_positive = int(np.count_nonzero(predicted & truth))
        precision = true_positive / int(predicted.sum()) if predicted.any() else 0.0
        recall = true_positive / int(truth.sum())
        f1 = (
            2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        )
        rows.append(
            {"threshold": float(threshold), "precision": precision, "recall": recall, "f1": f1}
        )
    best = max(rows, key=lambda row: (row["f1"], -row["threshold"]))
    return best["threshold"], rows


def sweep_mask_thresholds(
    mask: ProbMask, labels: ProbMask, candidates: Sequence[float]
) -> Dict[str, Tuple[float, List[SweepRow]]]:
    """Runs :func:`sweep_threshold` per channel of a mask against its label raster."""
    if mask.data.shape != labels.data.shape:
        raise ContractError("mask and labels differ in shape")
    return {
        "road": sweep_threshold(mask.road, labels.road > 0.5, candidates),
        "intersection": sweep_threshold(
            mask.intersection, labels.intersection > 0.5, candidates
        ),
    }
