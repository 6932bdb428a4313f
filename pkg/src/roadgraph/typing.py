"""Custom types for roadgraph."""

# pylint: disable=too-few-public-methods

from typing import List, Tuple

import numpy as np
import numpy.typing as npt
from typing_extensions import Literal, NotRequired, TypedDict

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]

Point = Tuple[float, float]
WindowKey = Tuple[int, int]

SceneStyle = Literal["grid", "radial", "mixed"]
TopologyMode = Literal["decoder", "astar"]


class TopoReport(TypedDict):
    """TOPO precision/recall/F1 report."""

    precision: float
    recall: float
    f1: float
    seeds: int
    matched_seeds: int
    spurious_seeds: int
    holes: int
    marbles: int
    matched: int


class AplsReport(TypedDict):
    """APLS report with both directional scores."""

    apls: float
    gt_to_pred: float
    pred_to_gt: float
    pairs: int


class EvalReport(TypedDict):
    """Machine-readable report written by the ``eval`` subcommand."""

    precision: float
    recall: float
    f1: float
    apls: float
    topo: NotRequired[TopoReport]
    apls_detail: NotRequired[AplsReport]


class SweepRow(TypedDict):
    """One candidate threshold of a threshold sweep."""

    threshold: float
    precision: float
    recall: float
    f1: float


class SceneMeta(TypedDict):
    """Contents of a dataset's ``meta.txt``."""

    image_width: int
    image_height: int
    window_size: int
    count_x: int
    count_y: int
    feature_scale: int
    feature_dim: int
    seed: int


class ManifestEntry(TypedDict):
    """One tensor listed in a parameter bundle manifest."""

    name: str
    dtype: int
    dims: List[int]
