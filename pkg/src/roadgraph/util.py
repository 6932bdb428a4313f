"""Utility functions for the command line interface. Used by the main module."""

import argparse
import json
import logging
import os
import sys
from typing import Any, Callable, Dict, List, NoReturn, Optional, Sequence, Tuple

import numpy as np
from tabulate import tabulate

from .config import apply_config, read_config
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
    ENCODER_SEED,
    FEATURE_DIR,
    FEATURE_SCALE,
    LEARNING_RATE,
    MASK_DIR,
    META_FILE,
    NUM_HEADS,
    NUM_LAYERS,
    SYNTH_BLUR_SIGMA,
    SYNTH_FEATURE_DIM,
    TOPO_MATCH_RADIUS,
    TOPO_PROPAGATION_RADIUS,
    TOPO_SAMPLE_INTERVAL,
    TOPO_SEED_COUNT,
)
from .data_classes import (
    AplsParams,
    ExtractionConfig,
    FeatureMap,
    SceneSpec,
    TopoNetConfig,
    TopoParams,
    TrainConfig,
    UtilArgs,
    WindowGrid,
)
from .exceptions import (
    ConfigError,
    ContractError,
    DataIOError,
    RoadGraphException,
    ShapeError,
    UsageError,
)
from .inference import (
    DirectoryProvider,
    infer_graph,
    plan_windows,
    sweep_threshold,
    window_count,
)
from .labelgen import dump_samples, make_topo_samples, random_patch
from .metrics import apls, topo_seeds, toposcore
from .nms import extract_vertices
from .raster import rasterize_labels
from .render import render_graph
from .serialization import load_graph, load_mask, read_meta, save_graph, save_mask
from .synth import (
    Scene,
    analytic_encoder,
    generate_scene,
    load_dataset,
    noisy_masks,
    write_dataset,
)
from .toponet import TopoNet, TopoSample, load_params, predict, save_params, train_topo_net
from .typing import EvalReport

logger = logging.getLogger(__name__)

# Edge thresholds tried on the validation patches after training.
SWEEP_CANDIDATES = tuple(round(0.05 * k, 2) for k in range(1, 20))

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser that raises :class:`UsageError` instead of exiting."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def _require(args: UtilArgs, *names: str) -> None:
    """Required flags are checked after parsing so a config file can supply them."""
    missing = [name for name in names if getattr(args, name, None) is None]
    if missing:
        flags = ", ".join("--" + name.replace("_", "-") for name in missing)
        raise UsageError(f"the following arguments are required: {flags}")


def _write_json(path: str, payload: Dict[str, Any]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as file:
            json.dump(payload, file, indent=2)
            file.write("\n")
    except OSError as e:
        raise DataIOError(f"cannot write {path!r}: {e.strerror}") from e


def _extraction_config(
    args: UtilArgs, edge_threshold: float = DEFAULT_EDGE_THRESHOLD
) -> ExtractionConfig:
    return ExtractionConfig(
        threshold=args.threshold,
        nms_radius=args.nms_radius,
        neighbor_radius=args.neighbor_radius,
        max_neighbors=args.max_neighbors,
        edge_threshold=edge_threshold,
        perturb_sigma=args.perturb_sigma,
        sources_per_patch=args.sources_per_patch,
        use_intersections=not args.no_intersections,
    )


def _default_grid(width: int, height: int, window_size: int, args: UtilArgs) -> WindowGrid:
    """Fewest windows per axis whose overlap covers the neighbour radius."""
    overlap = DEFAULT_NEIGHBOR_RADIUS
    count_x = args.grid_x or window_count(width, window_size, overlap)
    count_y = args.grid_y or window_count(height, window_size, overlap)
    return plan_windows(width, height, window_size, count_x, count_y, overlap)


def _synth(args: UtilArgs) -> None:
    _require(args, "out")
    window_size = min(args.window_size or DEFAULT_WINDOW_SIZE, args.width, args.height)
    grid = _default_grid(args.width, args.height, window_size, args)
    table = []
    for k in range(args.scenes):
        seed = args.seed + k
        spec = SceneSpec(
            args.width, args.height, args.style, args.density, args.jitter, seed
        )
        graph = generate_scene(spec)
        mask = noisy_masks(
            graph, args.width, args.height, args.noise_sigma, seed, args.blur_sigma
        )
        directory = args.out if args.scenes == 1 else os.path.join(args.out, f"scene_{k:03d}")
        write_dataset(
            directory, graph, mask, grid, seed, args.feature_dim, FEATURE_SCALE, args.threads
        )
        logger.info("scene %d/%d written to %s", k + 1, args.scenes, directory)
        table.append(
            [directory, seed, graph.num_vertices, graph.num_edges, graph.total_length()]
        )
    print(
        tabulate(
            table,
            ["Directory", "Seed", "Vertices", "Edges", "Length (px)"],
            floatfmt=".1f",
        )
    )


def _rasterize(args: UtilArgs) -> None:
    _require(args, "graph", "out", "width", "height")
    save_mask(args.out, rasterize_labels(load_graph(args.graph), args.width, args.height))


def _extract(args: UtilArgs) -> None:
    _require(args, "mask", "out")
    assert args.mask is not None
    graph = extract_vertices(load_mask(args.mask), _extraction_config(args))
    save_graph(args.out, graph)
    logger.info("extracted %d vertices", graph.num_vertices)


def _scene_directories(paths: Sequence[str]) -> List[str]:
    """Expands parent directories into the scene directories below them."""
    directories = []
    for path in paths:
        if os.path.isfile(os.path.join(path, META_FILE)):
            directories.append(path)
            continue
        try:
            children = sorted(os.listdir(path))
        except OSError as e:
            raise DataIOError(f"cannot read {path!r}: {e.strerror}") from e
        found = [
            os.path.join(path, child)
            for child in children
            if os.path.isfile(os.path.join(path, child, META_FILE))
        ]
        if not found:
            raise DataIOError(f"{path!r} holds no scene directory")
        directories.extend(found)
    return directories


Batch = Tuple[FeatureMap, List[TopoSample]]


def _training_batches(
    scenes: Sequence[Scene], cfg: ExtractionConfig, args: UtilArgs
) -> List[Batch]:
    meta = scenes[0].meta
    d_feat, scale = meta["feature_dim"], meta["feature_scale"]
    for scene in scenes[1:]:
        if (scene.meta["feature_dim"], scene.meta["feature_scale"]) != (d_feat, scale):
            raise ShapeError("scenes disagree on the feature width or scale")
    if args.patch_size % scale != 0:
        raise ContractError(f"patch size must be a multiple of the feature scale {scale}")

    rng = np.random.default_rng(args.seed)
    batches: List[Batch] = []
    for p in range(args.patches):
        scene = scenes[p % len(scenes)]
        bundle = random_patch(scene.graph, scene.mask, args.patch_size, rng, align=scale)
        assert bundle.mask is not None
        fmap = analytic_encoder(
            bundle.mask, 0, 0, args.patch_size, ENCODER_SEED, d_feat, scale
        )
        samples = make_topo_samples(
            bundle.graph, bundle.width, bundle.height, cfg, rng
        )
        if samples:
            batches.append((fmap, samples))
    if not batches:
        raise ContractError("no training patch holds a road vertex")
    return batches


def _train_topo(args: UtilArgs) -> None:
    _require(args, "data", "out")
    if not 0.0 <= args.val_fraction < 1.0:
        raise ContractError("--val-fraction must lie in [0, 1)")
    cfg = _extraction_config(args)
    scenes = [load_dataset(directory) for directory in _scene_directories(args.data)]
    batches = _training_batches(scenes, cfg, args)

    held_out = int(round(args.val_fraction * len(batches)))
    if args.val_fraction > 0 and held_out == 0 and len(batches) > 1:
        held_out = 1
    train, validation = batches[: len(batches) - held_out], batches[len(batches) - held_out :]
    logger.info(
        "%d scenes, %d training and %d validation patches",
        len(scenes),
        len(train),
        len(validation),
    )
    if args.dump_samples is not None:
        dump_samples(args.dump_samples, [s for _, samples in train for s in samples])

    net_config = TopoNetConfig(
        d_feat=scenes[0].meta["feature_dim"],
        num_heads=args.heads,
        num_layers=args.layers,
        use_offsets=not args.no_offsets,
        use_target_features=not args.no_target_features,
        offset_scale=cfg.neighbor_radius,
    )
    result = train_topo_net(
        net_config,
        train,
        TrainConfig(steps=args.steps, learning_rate=args.lr, seed=args.seed),
        progress=True,
    )
    net = result.net

    if validation:
        scores, labels = [], []
        for fmap, samples in validation:
            probabilities = predict(net, fmap, samples)
            for row, sample in zip(probabilities, samples):
                assert sample.labels is not None
                scores.append(row[sample.valid])
                labels.append(sample.labels[sample.valid])
        truth = np.concatenate(labels) > 0.5
        values = np.concatenate(scores)
        if truth.any():
            best, rows = sweep_threshold(values, truth, SWEEP_CANDIDATES)
            net.tuned_edge_threshold = best
            accuracy = float(np.mean((values >= best) == truth))
            print(
                tabulate(
                    [[r["threshold"], r["precision"], r["recall"], r["f1"]] for r in rows],
                    ["Edge threshold", "Precision", "Recall", "F1"],
                    floatfmt=".4f",
                )
            )
            print(f"tuned edge threshold {best:.2f}, validation accuracy {accuracy:.4f}")
        else:
            logger.warning("validation patches hold no positive pair, threshold not tuned")
    if result.losses:
        logger.info("final training loss %.6f", result.losses[-1])
    save_params(args.out, net)


def _edge_threshold(raw: str, tuned: Optional[float]) -> float:
    if raw == "tuned":
        if tuned is None:
            raise ConfigError("parameter file has no tuned edge threshold")
        return tuned
    try:
        return float(raw)
    except ValueError as e:
        raise UsageError(f"--edge-threshold expects a number or 'tuned', got '{raw}'") from e


def _infer(args: UtilArgs) -> None:
    _require(args, "out")
    if args.topology == "decoder":
        _require(args, "params")
    paths = {}
    for name, default in (("masks", MASK_DIR), ("feats", FEATURE_DIR), ("meta", META_FILE)):
        value = getattr(args, name)
        if value is None:
            if args.dataset is None:
                raise UsageError(f"--{name} is required without --data")
            value = os.path.join(args.dataset, default)
        paths[name] = value
    meta = read_meta(paths["meta"])

    net: Optional[TopoNet] = None
    tuned: Optional[float] = None
    if args.topology == "decoder":
        net = load_params(args.params, expected_d_feat=meta["feature_dim"])
        tuned = net.tuned_edge_threshold
    cfg = _extraction_config(args, _edge_threshold(args.edge_threshold, tuned))
    grid = plan_windows(
        meta["image_width"],
        meta["image_height"],
        args.window_size or meta["window_size"],
        args.grid_x or meta["count_x"],
        args.grid_y or meta["count_y"],
        cfg.neighbor_radius,
    )
    provider = DirectoryProvider(paths["masks"], paths["feats"], meta["feature_scale"])
    graph = infer_graph(provider, grid, net, cfg, threads=args.threads, topology=args.topology)
    save_graph(args.out, graph)
    logger.info("inferred %d vertices, %d edges", graph.num_vertices, graph.num_edges)


def _eval(args: UtilArgs) -> None:
    _require(args, "gt", "pred")
    assert args.gt is not None
    gt, pred = load_graph(args.gt), load_graph(args.pred)
    topo_params = TopoParams(
        match_radius=args.match_radius,
        propagation_radius=args.propagation_radius,
        sample_interval=args.sample_interval,
        seed_count=args.seed_count,
        seed=args.seed,
    )
    apls_params = AplsParams(
        snap_radius=args.snap_radius, pair_count=args.pair_count, seed=args.seed
    )
    outcomes = topo_seeds(gt, pred, topo_params)
    topo = toposcore(gt, pred, outcomes=outcomes)
    detail = apls(gt, pred, apls_params)
    report: EvalReport = {
        "precision": topo["precision"],
        "recall": topo["recall"],
        "f1": topo["f1"],
        "apls": detail["apls"],
        "topo": topo,
        "apls_detail": detail,
    }
    print(
        tabulate(
            [
                ["TOPO precision", topo["precision"]],
                ["TOPO recall", topo["recall"]],
                ["TOPO F1", topo["f1"]],
                ["APLS", detail["apls"]],
                ["APLS gt->pred", detail["gt_to_pred"]],
                ["APLS pred->gt", detail["pred_to_gt"]],
            ],
            ["Metric", "Value"],
            floatfmt=".4f",
        )
    )
    print(
        f"{topo['matched_seeds']}/{topo['seeds']} seeds matched, "
        f"{topo['spurious_seeds']} spurious prediction seeds, "
        f"{detail['pairs']} APLS pairs"
    )
    per_seed = [outcome._asdict() for outcome in outcomes]
    if args.per_seed:
        print(
            tabulate(
                [list(row.values()) for row in per_seed],
                ["Origin", "x", "y", "Snapped", "Holes", "Marbles", "Matched"],
                floatfmt=".1f",
            )
        )
    if args.json is not None:
        payload: Dict[str, Any] = dict(report)
        if args.per_seed:
            payload["seeds"] = per_seed
        _write_json(args.json, payload)


def _render(args: UtilArgs) -> None:
    _require(args, "graph", "out")
    render_graph(
        args.out,
        load_graph(args.graph),
        mask=load_mask(args.mask) if args.mask is not None else None,
        gt=load_graph(args.gt) if args.gt is not None else None,
        width=args.width,
        height=args.height,
    )


COMMANDS: Dict[str, Callable[[UtilArgs], None]] = {
    "synth": _synth,
    "rasterize": _rasterize,
    "extract": _extract,
    "train-topo": _train_topo,
    "infer": _infer,
    "eval": _eval,
    "render": _render,
}


def _add_extraction_flags(parser: argparse.ArgumentParser, edge_threshold: bool) -> None:
    group = parser.add_argument_group("extraction")
    group.add_argument(
        "--threshold",
        help=f"mask probability threshold, in (0, 1). Default: {DEFAULT_THRESHOLD}",
        default=DEFAULT_THRESHOLD,
        type=float,
    )
    group.add_argument(
        "--nms-radius",
        help=f"vertex spacing d_v, in pixels. Default: {DEFAULT_NMS_RADIUS}",
        default=DEFAULT_NMS_RADIUS,
        type=float,
    )
    group.add_argument(
        "--neighbor-radius",
        help=f"candidate edge radius, in pixels. Default: {DEFAULT_NEIGHBOR_RADIUS}",
        default=DEFAULT_NEIGHBOR_RADIUS,
        type=float,
    )
    group.add_argument(
        "--max-neighbors",
        help=f"candidate targets per source vertex. Default: {DEFAULT_MAX_NEIGHBORS}",
        default=DEFAULT_MAX_NEIGHBORS,
        type=int,
    )
    group.add_argument(
        "--perturb-sigma",
        help=f"training vertex noise, in pixels. Default: {DEFAULT_PERTURB_SIGMA}",
        default=DEFAULT_PERTURB_SIGMA,
        type=float,
    )
    group.add_argument(
        "--sources-per-patch",
        help=f"training sources per patch. Default: {DEFAULT_SOURCES_PER_PATCH}",
        default=DEFAULT_SOURCES_PER_PATCH,
        type=int,
    )
    group.add_argument(
        "--no-intersections",
        help="extract vertices from the road channel only",
        action="store_true",
    )
    if edge_threshold:
        group.add_argument(
            "--edge-threshold",
            help="edge probability threshold in (0, 1), or 'tuned' for the value "
            f"stored with the parameters. Default: {DEFAULT_EDGE_THRESHOLD}",
            default=str(DEFAULT_EDGE_THRESHOLD),
        )


def _add_grid_flags(parser: argparse.ArgumentParser, default_size: Optional[int]) -> None:
    parser.add_argument(
        "--window-size",
        help="sliding window side, in pixels. Default: "
        + (str(default_size) if default_size else "from meta.txt"),
        type=int,
    )
    parser.add_argument(
        "--grid-x", help="windows along x. Default: fewest covering the overlap", type=int
    )
    parser.add_argument(
        "--grid-y", help="windows along y. Default: fewest covering the overlap", type=int
    )


def _build_parser() -> Tuple[ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    common = ArgumentParser(add_help=False)
    common.add_argument("--seed", help="random seed. Default: 0", default=0, type=int)
    common.add_argument(
        "--threads", help="worker threads. Default: 1", default=1, type=int
    )
    common.add_argument("--config", help="file of 'key = value' defaults for the flags")
    common.add_argument(
        "--log-level",
        help="logging level. Default: WARNING",
        default="WARNING",
        choices=LOG_LEVELS,
    )
    common.add_argument(
        "-v", "--verbose", help="log at INFO level at least", action="store_true"
    )

    parser = ArgumentParser(
        prog="roadgraph",
        description="Road network graph extraction from probability masks and feature maps.",
    )
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True
    sub: Dict[str, argparse.ArgumentParser] = {}

    def add(name: str, description: str) -> argparse.ArgumentParser:
        sub[name] = commands.add_parser(
            name, help=description, description=description, parents=[common]
        )
        return sub[name]

    synth = add("synth", "generate synthetic scenes in the dataset layout")
    synth.add_argument("--out", help="dataset directory to write")
    synth.add_argument(
        "--width", help="image width, in pixels. Default: 1024", default=1024, type=int
    )
    synth.add_argument(
        "--height", help="image height, in pixels. Default: 1024", default=1024, type=int
    )
    synth.add_argument(
        "--style",
        help="road layout. Default: grid",
        default="grid",
        choices=("grid", "radial", "mixed"),
    )
    synth.add_argument(
        "--density",
        help="blocks or rings per 256 pixels. Default: 2.0",
        default=2.0,
        type=float,
    )
    synth.add_argument(
        "--jitter",
        help="lattice vertex jitter, in pixels. Default: 3.0",
        default=3.0,
        type=float,
    )
    synth.add_argument(
        "--noise-sigma",
        help="mask noise, in probability units. Default: 0.05",
        default=0.05,
        type=float,
    )
    synth.add_argument(
        "--blur-sigma",
        help=f"mask blur, in pixels. Default: {SYNTH_BLUR_SIGMA}",
        default=SYNTH_BLUR_SIGMA,
        type=float,
    )
    synth.add_argument(
        "--scenes",
        help="number of scenes; more than one writes scene_NNN/ subdirectories. Default: 1",
        default=1,
        type=int,
    )
    synth.add_argument(
        "--feature-dim",
        help=f"feature channels per cell. Default: {SYNTH_FEATURE_DIM}",
        default=SYNTH_FEATURE_DIM,
        type=int,
    )
    _add_grid_flags(synth, DEFAULT_WINDOW_SIZE)

    rasterize = add("rasterize", "rasterize a graph into road and intersection label masks")
    rasterize.add_argument("--graph", help="graph JSON file")
    rasterize.add_argument("--out", help="mask tensor file to write")
    rasterize.add_argument("--width", help="mask width, in pixels", type=int)
    rasterize.add_argument("--height", help="mask height, in pixels", type=int)

    extract = add("extract", "extract graph vertices from a probability mask")
    extract.add_argument("--mask", help="mask tensor file")
    extract.add_argument("--out", help="graph JSON file to write")
    _add_extraction_flags(extract, edge_threshold=False)

    train = add("train-topo", "train the topology decoder on synthetic scenes")
    train.add_argument("--data", help="scene directories or their parents", nargs="+")
    train.add_argument("--out", help="parameter file to write")
    train.add_argument(
        "--steps", help="optimizer steps. Default: 2000", default=2000, type=int
    )
    train.add_argument(
        "--lr",
        help=f"Adam learning rate. Default: {LEARNING_RATE}",
        default=LEARNING_RATE,
        type=float,
    )
    train.add_argument(
        "--layers",
        help=f"transformer layers, 0 for none. Default: {NUM_LAYERS}",
        default=NUM_LAYERS,
        type=int,
    )
    train.add_argument(
        "--heads",
        help=f"attention heads. Default: {NUM_HEADS}",
        default=NUM_HEADS,
        type=int,
    )
    train.add_argument("--no-offsets", help="drop the offset input", action="store_true")
    train.add_argument(
        "--no-target-features", help="drop the target feature input", action="store_true"
    )
    train.add_argument(
        "--val-fraction",
        help="share of patches held out for threshold tuning. Default: 0.1",
        default=0.1,
        type=float,
    )
    train.add_argument(
        "--patches",
        help="training patches drawn over all scenes. Default: 64",
        default=64,
        type=int,
    )
    train.add_argument(
        "--patch-size", help="patch side, in pixels. Default: 256", default=256, type=int
    )
    train.add_argument("--dump-samples", help="directory to write the training samples to")
    _add_extraction_flags(train, edge_threshold=False)

    infer = add("infer", "infer a road graph with sliding windows")
    infer.add_argument("--params", help="parameter file from train-topo")
    infer.add_argument("--data", dest="dataset", help="dataset directory")
    infer.add_argument("--masks", help="directory of win_{ix}_{iy}.rgt masks")
    infer.add_argument("--feats", help="directory of win_{ix}_{iy}.rgt feature maps")
    infer.add_argument("--meta", help="meta.txt of the image")
    infer.add_argument("--out", help="graph JSON file to write")
    infer.add_argument(
        "--topology",
        help="edge scorer: the trained decoder, or A* path search over the fused "
        "road mask (no --params needed). Default: decoder",
        default="decoder",
        choices=("decoder", "astar"),
    )
    _add_grid_flags(infer, None)
    _add_extraction_flags(infer, edge_threshold=True)

    evaluate = add("eval", "score a predicted graph against ground truth")
    evaluate.add_argument("--gt", help="ground-truth graph JSON file")
    evaluate.add_argument("--pred", help="predicted graph JSON file")
    evaluate.add_argument(
        "--match-radius",
        help=f"TOPO match radius, in pixels. Default: {TOPO_MATCH_RADIUS}",
        default=TOPO_MATCH_RADIUS,
        type=float,
    )
    evaluate.add_argument(
        "--propagation-radius",
        help=f"TOPO walk radius, in pixels. Default: {TOPO_PROPAGATION_RADIUS}",
        default=TOPO_PROPAGATION_RADIUS,
        type=float,
    )
    evaluate.add_argument(
        "--sample-interval",
        help=f"TOPO sample spacing, in pixels. Default: {TOPO_SAMPLE_INTERVAL}",
        default=TOPO_SAMPLE_INTERVAL,
        type=float,
    )
    evaluate.add_argument(
        "--seed-count",
        help=f"TOPO seeds. Default: {TOPO_SEED_COUNT}",
        default=TOPO_SEED_COUNT,
        type=int,
    )
    evaluate.add_argument(
        "--snap-radius",
        help=f"APLS snap radius, in pixels. Default: {APLS_SNAP_RADIUS}",
        default=APLS_SNAP_RADIUS,
        type=float,
    )
    evaluate.add_argument(
        "--pair-count",
        help=f"APLS vertex pairs per direction. Default: {APLS_PAIR_COUNT}",
        default=APLS_PAIR_COUNT,
        type=int,
    )
    evaluate.add_argument("--json", help="write the report as JSON to this file")
    evaluate.add_argument("--per-seed", help="report every TOPO seed", action="store_true")

    render = add("render", "draw a graph over an optional mask (.png, .svg or .pdf)")
    render.add_argument("--graph", help="graph JSON file")
    render.add_argument("--mask", help="background mask tensor file")
    render.add_argument("--gt", help="ground-truth graph JSON file to overlay")
    render.add_argument("--out", help="figure file to write")
    render.add_argument(
        "--width", help="figure width, in pixels. Default: from the mask", type=int
    )
    render.add_argument(
        "--height", help="figure height, in pixels. Default: from the mask", type=int
    )

    return parser, sub


def _parse(argv: Optional[Sequence[str]]) -> UtilArgs:
    parser, sub = _build_parser()
    args = parser.parse_args(argv, namespace=UtilArgs())
    if args.config is not None:
        apply_config(sub[args.command], read_config(args.config))
        args = parser.parse_args(argv, namespace=UtilArgs())
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    return args


def _configure_logging(args: UtilArgs) -> None:
    level = logging.getLevelName(args.log_level)
    if args.verbose:
        level = min(level, logging.INFO)
    logging.basicConfig(
        format="%(levelname)s: %(name)s: %(message)s", level=level, force=True
    )


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Runs one subcommand and returns the exit status.

    Failures print a single ``CODE: message`` line to stderr and return 2.
    """
    try:
        args = _parse(argv)
        _configure_logging(args)
        COMMANDS[args.command](args)
    except RoadGraphException as e:
        message = " ".join(str(e).split())
        print(f"{e.code}: {message}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    """Run the command line interface."""
    sys.exit(run())


if __name__ == "__main__":
    main()
