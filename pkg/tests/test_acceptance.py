"""
Slow end-to-end checks. They run only with ``ROADGRAPH_SLOW=1``:

    ROADGRAPH_SLOW=1 pytest tests/test_acceptance.py
"""

import logging
import os
import time

import networkx as nx
import numpy as np
import pytest
import torch

from roadgraph.constants import ENCODER_SEED, FEATURE_SCALE, SYNTH_FEATURE_DIM
from roadgraph.data_classes import (
    ExtractionConfig,
    FeatureMap,
    ProbMask,
    RoadGraph,
    SceneSpec,
    TopoNetConfig,
    TrainConfig,
    WindowGrid,
)
from roadgraph.inference import SceneProvider, fuse_windows, infer_graph
from roadgraph.labelgen import (
    connectivity_labels,
    emulate_vertex_prediction,
    make_topo_samples,
    random_patch,
    subdivide_graph,
)
from roadgraph.metrics import apls, toposcore
from roadgraph.nms import extract_vertices
from roadgraph.synth import analytic_encoder, generate_scene, make_encoder, noisy_masks
from roadgraph.toponet import (
    TopoNet,
    build_sample,
    encode_samples,
    predict,
    stack_labels,
    train_topo_net,
)

from .helpers import (
    brute_connectivity,
    brute_extract,
    check_gradients,
    labelled_samples,
    random_graph,
)

pytestmark = pytest.mark.skipif(
    os.environ.get("ROADGRAPH_SLOW") != "1", reason="set ROADGRAPH_SLOW=1 to run"
)

logger = logging.getLogger(__name__)


def test_nms_matches_brute_force():
    rng = np.random.default_rng(100)
    for _ in range(100):
        support = rng.random((64, 64, 2)) < 0.2
        data = np.where(support, rng.random((64, 64, 2)), 0.0).astype(np.float32)
        threshold = float(rng.choice([0.3, 0.5, 0.7]))
        radius = float(rng.choice([4.0, 8.0]))
        cfg = ExtractionConfig(threshold=threshold, nms_radius=radius)
        found = {tuple(v) for v in extract_vertices(ProbMask(data), cfg).vertices.tolist()}
        assert found == brute_extract(data, threshold, radius)


def test_connectivity_matches_brute_force(cfg):
    rng = np.random.default_rng(200)
    for _ in range(200):
        graph = random_graph(rng, int(rng.integers(3, 8)), extent=60.0)
        graph = subdivide_graph(graph, cfg.nms_radius / 4)
        emulated = emulate_vertex_prediction(graph, cfg, rng)
        count = len(emulated.points)
        for source in rng.choice(count, size=min(3, count), replace=False).tolist():
            sample = build_sample(emulated.points, source, cfg)
            targets = sample.target_indices[sample.valid].tolist()
            expected = brute_connectivity(
                graph, emulated.anchors, source, targets, cfg.neighbor_radius
            )
            labels = connectivity_labels(
                graph, emulated.anchors, source, targets, cfg.neighbor_radius
            )
            assert labels.tolist() == expected


@pytest.mark.parametrize(
    "config",
    [
        TopoNetConfig(d_feat=32),
        TopoNetConfig(d_feat=32, num_heads=1, num_layers=1),
        TopoNetConfig(d_feat=32, num_heads=8, num_layers=3),
        TopoNetConfig(d_feat=32, num_layers=0),
        TopoNetConfig(d_feat=32, num_heads=2, use_offsets=False),
        TopoNetConfig(d_feat=32, use_target_features=False),
    ],
)
def test_gradients_full_width(config):
    rng = np.random.default_rng(config.num_heads * 10 + config.num_layers)
    torch.manual_seed(config.num_heads)
    cfg = ExtractionConfig(max_neighbors=16)
    net = TopoNet(config, dtype=torch.float64)
    fmap = FeatureMap(rng.normal(size=(8, 8, 32)))
    samples = labelled_samples(rng, fmap, cfg, 3)
    inputs, valid = encode_samples(config, fmap, samples, torch.float64)
    labels = stack_labels(samples, torch.float64)
    worst, skipped = check_gradients(net, inputs, valid, labels, entries=16, rng=rng)
    assert worst < 1e-3
    assert skipped < 0.3


def test_forward_invariants_full_width(cfg):
    rng = np.random.default_rng(500)
    torch.manual_seed(500)
    config = TopoNetConfig(d_feat=32)
    net = TopoNet(config, dtype=torch.float64)
    for _ in range(50):
        fmap = FeatureMap(rng.normal(size=(8, 8, 32)))
        sample = labelled_samples(rng, fmap, cfg, 1)[0]
        inputs, valid = encode_samples(config, fmap, [sample], torch.float64)
        noisy = inputs.clone()
        noisy[~valid] = torch.as_tensor(
            rng.normal(scale=100.0, size=(int((~valid).sum()), config.input_dim))
        )
        order = torch.as_tensor(
            np.concatenate([rng.permutation(sample.num_valid), np.arange(sample.num_valid, 16)])
        )
        with torch.no_grad():
            clean = net.probabilities(inputs, valid)
            dirty = net.probabilities(noisy, valid)
            shuffled = net.probabilities(inputs[:, order], valid[:, order])
        assert torch.allclose(clean[valid], dirty[valid], atol=1e-6)
        assert torch.allclose(shuffled[0], clean[0, order], atol=1e-6)


def _bridge_or_edge(graph: RoadGraph, rng: np.random.Generator) -> int:
    bridges = {tuple(sorted(e)) for e in nx.bridges(graph.to_networkx())}
    edges = [tuple(sorted(e)) for e in graph.edges.tolist()]
    choices = [k for k, e in enumerate(edges) if e in bridges] or list(range(len(edges)))
    return int(rng.choice(choices))


def test_metric_identities():
    rng = np.random.default_rng(400)
    for k in range(20):
        if k % 2:
            graph = generate_scene(SceneSpec(256, 256, style="radial", seed=k))
        else:
            graph = random_graph(rng, 15, extent=300.0)
        topo = toposcore(graph, graph)
        assert topo["f1"] == pytest.approx(1.0, abs=1e-6)
        assert apls(graph, graph)["apls"] == pytest.approx(1.0, abs=1e-6)

        cut = _bridge_or_edge(graph, rng)
        pruned = RoadGraph(graph.vertices, np.delete(graph.edges, cut, axis=0))
        assert apls(graph, pruned)["apls"] <= 1.0 + 1e-9

        n = graph.num_vertices
        spur = RoadGraph(
            np.vstack([graph.vertices, [[900.0, 900.0], [960.0, 900.0]]]),
            np.vstack([graph.edges, [[n, n + 1]]]),
        )
        assert toposcore(graph, spur)["precision"] <= topo["precision"] + 1e-9


def _training_stream(scenes, cfg, rng, patches_per_scene=4, size=256):
    stream = []
    for graph, mask in scenes:
        for _ in range(patches_per_scene):
            bundle = random_patch(graph, mask, size, rng, align=FEATURE_SCALE)
            fmap = analytic_encoder(bundle.mask, 0, 0, size, ENCODER_SEED, SYNTH_FEATURE_DIM)
            samples = make_topo_samples(bundle.graph, size, size, cfg, rng)
            if samples:
                stream.append((fmap, samples))
    return stream


def _scenes(seeds, size=512):
    scenes = []
    for seed in seeds:
        style = "grid" if seed % 2 else "radial"
        graph = generate_scene(SceneSpec(size, size, style=style, seed=seed))
        scenes.append((graph, noisy_masks(graph, size, size, 0.05, seed)))
    return scenes


@pytest.fixture(scope="module")
def trained_net():
    cfg = ExtractionConfig()
    rng = np.random.default_rng(600)
    stream = _training_stream(_scenes(range(50)), cfg, rng)
    torch.manual_seed(600)
    result = train_topo_net(
        TopoNetConfig(d_feat=SYNTH_FEATURE_DIM),
        stream,
        TrainConfig(steps=6000, learning_rate=1e-3, seed=600),
    )
    return result.net


def test_end_to_end_closure(trained_net):
    cfg = ExtractionConfig()
    held_out = _scenes(range(1000, 1010))

    rng = np.random.default_rng(700)
    correct = total = 0
    for fmap, samples in _training_stream(held_out, cfg, rng):
        probabilities = predict(trained_net, fmap, samples)
        for row, sample in zip(probabilities, samples):
            predicted = row[sample.valid] >= 0.5
            correct += int(np.sum(predicted == (sample.labels[sample.valid] > 0.5)))
            total += sample.num_valid
    accuracy = correct / total

    grid = WindowGrid(512, 512, 256, 4, 4)
    apls_scores, f1_scores = [], []
    for graph, mask in held_out:
        provider = SceneProvider(mask, grid, make_encoder())
        inferred = infer_graph(provider, grid, trained_net, cfg, threads=4)
        apls_scores.append(apls(graph, inferred)["apls"])
        f1_scores.append(toposcore(graph, inferred)["f1"])
    logger.info(
        "accuracy %.4f, APLS %.4f, TOPO F1 %.4f",
        accuracy,
        np.mean(apls_scores),
        np.mean(f1_scores),
    )
    assert accuracy >= 0.95
    assert np.mean(apls_scores) >= 0.90
    assert np.mean(f1_scores) >= 0.90


def _large_scene():
    graph = generate_scene(SceneSpec(2048, 2048, style="mixed", seed=2048))
    return graph, noisy_masks(graph, 2048, 2048, 0.05, seed=2048)


def test_threads_agree_on_a_large_scene(trained_net):
    _, mask = _large_scene()
    grid = WindowGrid(2048, 2048, 512, 16, 16)
    provider = SceneProvider(mask, grid, make_encoder())
    fused = fuse_windows(provider, grid, threads=1)
    assert np.allclose(fused.data, mask.data, atol=1e-6)

    timings = {}
    graphs = {}
    for threads in (1, 8):
        start = time.perf_counter()
        graphs[threads] = infer_graph(
            provider, grid, trained_net, ExtractionConfig(), threads=threads
        )
        timings[threads] = time.perf_counter() - start
    logger.info("1 thread %.1f s, 8 threads %.1f s", timings[1], timings[8])
    assert graphs[1] == graphs[8]


def test_coarse_grid_costs_little_accuracy(trained_net):
    graph, mask = _large_scene()
    scores = {}
    for count in (4, 16):
        grid = WindowGrid(2048, 2048, 512, count, count)
        start = time.perf_counter()
        inferred = infer_graph(
            SceneProvider(mask, grid, make_encoder()), grid, trained_net, ExtractionConfig(),
            threads=4,
        )
        elapsed = time.perf_counter() - start
        scores[count] = apls(graph, inferred)["apls"]
        logger.info("%dx%d windows: APLS %.4f in %.1f s", count, count, scores[count], elapsed)
    assert scores[4] >= scores[16] - 0.03
