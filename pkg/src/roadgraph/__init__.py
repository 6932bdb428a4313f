"""roadgraph turns road and intersection probability masks plus image feature
maps into vectorized road network graphs, and scores graphs with the TOPO and
APLS metrics."""

from . import exceptions
from .data_classes import (
    AplsParams,
    ExtractionConfig,
    FeatureMap,
    ProbMask,
    RoadGraph,
    SceneSpec,
    TopoNetConfig,
    TopoParams,
    TrainConfig,
    WindowGrid,
)
from .inference import (
    DirectoryProvider,
    FeatureCache,
    SceneProvider,
    infer_graph,
    plan_windows,
    sweep_threshold,
)
from .labelgen import connectivity_labels, make_topo_samples
from .metrics import apls, evaluate, toposcore
from .nms import extract_vertices, nms_points
from .raster import fuse_masks, rasterize_labels
from .synth import analytic_encoder, generate_scene, noisy_masks
from .toponet import TopoNet, TopoSample, build_sample, load_params, save_params
from .version import __version__, __version_info__

__all__ = [
    "AplsParams",
    "DirectoryProvider",
    "ExtractionConfig",
    "FeatureCache",
    "FeatureMap",
    "ProbMask",
    "RoadGraph",
    "SceneProvider",
    "SceneSpec",
    "TopoNet",
    "TopoNetConfig",
    "TopoParams",
    "TopoSample",
    "TrainConfig",
    "WindowGrid",
    "analytic_encoder",
    "apls",
    "build_sample",
    "connectivity_labels",
    "evaluate",
    "exceptions",
    "extract_vertices",
    "fuse_masks",
    "generate_scene",
    "infer_graph",
    "load_params",
    "make_topo_samples",
    "nms_points",
    "noisy_masks",
    "plan_windows",
    "rasterize_labels",
    "save_params",
    "sweep_threshold",
    "toposcore",
    "__version__",
    "__version_info__",
]
