"""Figure output: a road graph drawn over an optional probability mask."""

import os
from typing import Optional

import numpy as np
from matplotlib.axes import Axes
from matplotlib.collections import LineCollection
from matplotlib.figure import Figure

from .data_classes import ProbMask, RoadGraph
from .exceptions import ContractError, DataIOError

FORMATS = (".png", ".svg", ".pdf")

_PRED_COLOR = "#f28e2b"
_GT_COLOR = "#4e79a7"
_INTERSECTION_COLOR = "#e15759"


def _draw(axes: Axes, graph: RoadGraph, color: str, width: float, highlight: bool) -> None:
    if graph.num_edges:
        axes.add_collection(
            LineCollection(graph.vertices[graph.edges], colors=color, linewidths=width)
        )
    if graph.num_vertices:
        special = graph.degrees() != 2
        axes.scatter(*graph.vertices[~special].T, s=4, c=color, linewidths=0)
        if highlight:
            axes.scatter(*graph.vertices[special].T, s=14, c=_INTERSECTION_COLOR, linewidths=0)


def render_graph(
    path: str,
    graph: RoadGraph,
    mask: Optional[ProbMask] = None,
    gt: Optional[RoadGraph] = None,
    width: Optional[int] = None,
    height: Optional[int] = None,
    dpi: int = 100,
) -> None:
    """
    Draws ``graph`` (edges as lines, vertices as dots, degree != 2 vertices
    highlighted) over the road channel of ``mask`` in grayscale, with an
    optional ground-truth overlay. The file format follows the extension of
    ``path``: ``.png``, ``.svg`` or ``.pdf``.
    """
    extension = os.path.splitext(path)[1].lower()
    if extension not in FORMATS:
        raise ContractError(f"unsupported figure format '{extension}', use {', '.join(FORMATS)}")
    if mask is not None:
        width, height = mask.width, mask.height
    if width is None or height is None:
        corners = [g.vertices for g in (graph, gt) if g is not None and g.num_vertices]
        top = np.concatenate(corners).max(axis=0) if corners else np.zeros(2)
        width, height = int(np.ceil(top[0])) + 1, int(np.ceil(top[1])) + 1

    figure = Figure(figsize=(width / dpi, height / dpi), dpi=dpi)
    axes = figure.add_axes((0, 0, 1, 1))
    axes.set_axis_off()
    if mask is not None:
        axes.imshow(
            mask.road,
            cmap="gray",
            vmin=0.0,
            vmax=1.0,
            interpolation="nearest",
            extent=(-0.5, width - 0.5, height - 0.5, -0.5),
        )
    else:
        axes.set_facecolor("black")
    if gt is not None:
        _draw(axes, gt, _GT_COLOR, 2.5, highlight=False)
    _draw(axes, graph, _PRED_COLOR, 1.2, highlight=True)
    axes.set_xlim(-0.5, width - 0.5)
    axes.set_ylim(height - 0.5, -0.5)
    try:
        figure.savefig(path, dpi=dpi, facecolor="black")
    except OSError as e:
        raise DataIOError(f"cannot write {path!r}: {e.strerror}") from e
