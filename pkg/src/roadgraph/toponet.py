"""
The topology decoder: per-source samples of candidate targets, a small
transformer encoder scoring edge existence, its loss, training loop and
parameter files.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import torch
from torch import nn
from tqdm import tqdm

from .constants import ADAM_BETAS, ADAM_EPS, PROB_CLAMP
from .data_classes import ExtractionConfig, FeatureMap, TopoNetConfig, TrainConfig
from .exceptions import (
    ContractError,
    NumericalError,
    ShapeError,
    TensorFormatError,
)
from .geometry import bilinear_sample
from .serialization import PathLike, read_bundle, write_bundle
from .typing import BoolArray, FloatArray, IntArray

logger = logging.getLogger(__name__)


@dataclass
class TopoSample:
    """
    One topology query: a source vertex and up to ``N_nbr`` candidate targets.

    Slots are ordered by ascending distance from the source. Invalid slots
    hold index 0 and zero coordinates; they never reach the loss and never
    take part in attention. ``offsets`` are ``target_points - source_point``
    for valid slots.
    """

    source_index: int
    target_indices: IntArray
    valid: BoolArray
    offsets: FloatArray
    source_point: FloatArray
    target_points: FloatArray
    labels: Optional[FloatArray] = None

    @property
    def max_neighbors(self) -> int:
        """Number of slots."""
        return int(len(self.valid))

    @property
    def num_valid(self) -> int:
        """Number of valid slots."""
        return int(np.count_nonzero(self.valid))

    def moved(self, source_point: FloatArray, target_points: FloatArray) -> "TopoSample":
        """Returns a copy whose input coordinates (and offsets) are replaced."""
        mask = self.valid[:, None]
        targets = np.where(mask, np.asarray(target_points, dtype=np.float64), 0.0)
        source = np.asarray(source_point, dtype=np.float64)
        return TopoSample(
            source_index=self.source_index,
            target_indices=self.target_indices,
            valid=self.valid,
            offsets=np.where(mask, targets - source, 0.0),
            source_point=source,
            target_points=targets,
            labels=self.labels,
        )


def build_sample(
    vertices: npt.ArrayLike,
    source_index: int,
    cfg: ExtractionConfig,
    candidates: Optional[BoolArray] = None,
) -> TopoSample:
    """
    Collects the nearest vertices around a source.

    Args:
        vertices (array-like): ``(V, 2)`` vertex coordinates.
        source_index (int): Index of the source vertex.
        cfg (ExtractionConfig): Supplies ``neighbor_radius`` and ``max_neighbors``.
        candidates (np.ndarray, optional): Boolean ``(V,)`` mask restricting
            which vertices may become targets.

    Returns:
        TopoSample: The ``max_neighbors`` nearest other vertices within
        ``neighbor_radius`` (ties by ascending index), without labels.
    """
    points = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
    if not 0 <= source_index < len(points):
        raise ContractError(f"source index {source_index} is out of range")
    source = points[source_index]
    delta = points - source
    distances = np.hypot(delta[:, 0], delta[:, 1])
    eligible = distances <= cfg.neighbor_radius
    eligible[source_index] = False
    if candidates is not None:
        eligible &= np.asarray(candidates, dtype=bool)

    indices = np.flatnonzero(eligible)
    indices = indices[np.lexsort((indices, distances[indices]))][: cfg.max_neighbors]

    slots = cfg.max_neighbors
    target_indices = np.zeros(slots, dtype=np.int64)
    valid = np.zeros(slots, dtype=bool)
    target_points = np.zeros((slots, 2), dtype=np.float64)
    offsets = np.zeros((slots, 2), dtype=np.float64)
    count = len(indices)
    target_indices[:count] = indices
    valid[:count] = True
    target_points[:count] = points[indices]
    offsets[:count] = delta[indices]
    return TopoSample(
        source_index=int(source_index),
        target_indices=target_indices,
        valid=valid,
        offsets=offsets,
        source_point=source.copy(),
        target_points=target_points,
    )


class EncoderBlock(nn.Module):
    """Pre-normalized self-attention and ReLU feed-forward sublayers with residuals."""

    def __init__(self, d_model: int, num_heads: int, ffn_multiplier: int) -> None:
        super().__init__()
        self.num_heads = num_heads
        self.norm_attn = nn.LayerNorm(d_model)
        self.query = nn.Linear(d_model, d_model)
        self.key = nn.Linear(d_model, d_model)
        self.value = nn.Linear(d_model, d_model)
        self.output = nn.Linear(d_model, d_model)
        self.norm_ffn = nn.LayerNorm(d_model)
        self.ffn_in = nn.Linear(d_model, ffn_multiplier * d_model)
        self.ffn_out = nn.Linear(ffn_multiplier * d_model, d_model)

    def attention(self, x: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        """Multi-head scaled dot-product attention restricted to ``allowed`` pairs."""
        batch, slots, d_model = x.shape
        head_dim = d_model // self.num_heads

        def heads(t: torch.Tensor) -> torch.Tensor:
            return t.view(batch, slots, self.num_heads, head_dim).transpose(1, 2)

        q, k, v = heads(self.query(x)), heads(self.key(x)), heads(self.value(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(head_dim)
        scores = scores.masked_fill(~allowed[:, None], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        attended = (weights @ v).transpose(1, 2).reshape(batch, slots, d_model)
        return self.output(attended)  # type: ignore[no-any-return]

    def forward(self, x: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        x = x + self.attention(self.norm_attn(x), allowed)
        hidden = torch.relu(self.ffn_in(self.norm_ffn(x)))
        return x + self.ffn_out(hidden)  # type: ignore[no-any-return]


class TopoNet(nn.Module):
    """
    Scores the existence of an edge between a source vertex and each of its
    candidate targets.

    Each slot's input is ``[f_src, f_tgt, offset / offset_scale]``, projected
    to ``d_feat`` channels, passed through ``num_layers`` encoder blocks whose
    attention only connects valid slots, and reduced to one logit per slot.
    """

    def __init__(self, config: TopoNetConfig, dtype: torch.dtype = torch.float32) -> None:
        super().__init__()
        self.config = config
        self.tuned_edge_threshold: Optional[float] = None
        d_model = config.d_feat
        self.input_projection = nn.Linear(config.input_dim, d_model)
        self.blocks = nn.ModuleList(
            EncoderBlock(d_model, config.num_heads, config.ffn_multiplier)
            for _ in range(config.num_layers)
        )
        self.output_head = nn.Linear(d_model, 1)
        self.reset_parameters()
        self.to(dtype)

    def reset_parameters(self) -> None:
        """Xavier-uniform weights and zero biases for every linear layer."""
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.xavier_uniform_(module.weight)
                nn.init.zeros_(module.bias)

    @property
    def dtype(self) -> torch.dtype:
        """Parameter dtype."""
        return self.output_head.weight.dtype

    def forward(self, inputs: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        """
        Args:
            inputs (torch.Tensor): ``(B, N, 2 * d_feat + 2)`` slot inputs.
            valid (torch.Tensor): ``(B, N)`` boolean slot validity.

        Returns:
            torch.Tensor: ``(B, N)`` logits; invalid slots carry the head bias.
        """
        gate = valid.unsqueeze(-1).to(inputs.dtype)
        x = self.input_projection(inputs * gate)
        eye = torch.eye(valid.shape[1], dtype=torch.bool, device=valid.device)
        allowed = (valid[:, :, None] & valid[:, None, :]) | eye
        for block in self.blocks:
            x = block(x, allowed)
        return self.output_head(x * gate).squeeze(-1)  # type: ignore[no-any-return]

    def probabilities(self, inputs: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        """Sigmoid of :meth:`forward`."""
        return torch.sigmoid(self.forward(inputs, valid))


def encode_samples(
    config: TopoNetConfig,
    fmap: FeatureMap,
    samples: Sequence[TopoSample],
    dtype: torch.dtype = torch.float32,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Builds decoder inputs for a batch of samples sharing one feature map.

    Returns:
        tuple: ``(B, N, 2 * d_feat + 2)`` inputs and ``(B, N)`` validity.

    Raises:
        ShapeError: If the feature map's channel count differs from ``d_feat``.
        ContractError: If a source or valid target lies outside the map's window.
    """
    if fmap.dim != config.d_feat:
        raise ShapeError(f"feature map has {fmap.dim} channels, decoder expects {config.d_feat}")
    if not samples:
        raise ContractError("cannot encode an empty batch")
    slots = samples[0].max_neighbors
    if any(sample.max_neighbors != slots for sample in samples):
        raise ShapeError("samples in one batch must share their slot count")

    batch = len(samples)
    d_feat = config.d_feat
    inputs = np.zeros((batch, slots, config.input_dim), dtype=np.float64)
    valid = np.zeros((batch, slots), dtype=bool)
    for b, sample in enumerate(samples):
        mask = sample.valid
        valid[b] = mask
        if not mask.any():
            continue
        inputs[b, mask, :d_feat] = bilinear_sample(fmap, sample.source_point)
        if config.use_target_features:
            inputs[b, mask, d_feat : 2 * d_feat] = bilinear_sample(fmap, sample.target_points[mask])
        if config.use_offsets:
            inputs[b, mask, 2 * d_feat :] = sample.offsets[mask] / config.offset_scale
    return torch.as_tensor(inputs, dtype=dtype), torch.as_tensor(valid)


def stack_labels(samples: Sequence[TopoSample], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Stacks sample labels into a ``(B, N)`` tensor."""
    if any(sample.labels is None for sample in samples):
        raise ContractError("training samples must carry labels")
    return torch.as_tensor(
        np.stack([sample.labels for sample in samples]), dtype=dtype  # type: ignore[misc]
    )


def predict(net: TopoNet, fmap: FeatureMap, samples: Sequence[TopoSample]) -> FloatArray:
    """Returns ``(B, N)`` edge probabilities; values at invalid slots are meaningless."""
    inputs, valid = encode_samples(net.config, fmap, samples, net.dtype)
    with torch.no_grad():
        return net.probabilities(inputs, valid).double().numpy()  # type: ignore[no-any-return]


def bce_loss(
    probabilities: torch.Tensor, labels: torch.Tensor, valid: torch.Tensor
) -> torch.Tensor:
    """
    Mean binary cross-entropy over valid slots.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]`` first; with no valid slot
    the loss is 0 and so is its gradient.
    """
    p = probabilities.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = -(labels * torch.log(p) + (1.0 - labels) * torch.log(1.0 - p))
    weight = valid.to(terms.dtype)
    return (terms * weight).sum() / weight.sum().clamp(min=1.0)


def sample_loss(net: TopoNet, fmap: FeatureMap, samples: Sequence[TopoSample]) -> torch.Tensor:
    """Loss of one batch, kept on the autograd tape."""
    inputs, valid = encode_samples(net.config, fmap, samples, net.dtype)
    return bce_loss(net.probabilities(inputs, valid), stack_labels(samples, net.dtype), valid)


def backward(
    net: TopoNet, fmap: FeatureMap, samples: Sequence[TopoSample]
) -> Dict[str, torch.Tensor]:
    """
    Gradient of the batch loss with respect to every parameter.

    Returns:
        dict: Parameter name to gradient; parameters without influence get zeros.
    """
    net.zero_grad(set_to_none=True)
    sample_loss(net, fmap, samples).backward()
    return {
        name: param.grad.detach().clone()
        if param.grad is not None
        else torch.zeros_like(param)
        for name, param in net.named_parameters()
    }


class TrainResult(NamedTuple):
    """Trained decoder and the loss of every step."""

    net: TopoNet
    losses: List[float]


def train_topo_net(
    net_config: TopoNetConfig,
    stream: Iterable[Tuple[FeatureMap, Sequence[TopoSample]]],
    train_config: TrainConfig,
    net: Optional[TopoNet] = None,
    progress: bool = False,
) -> TrainResult:
    """
    Trains the decoder with Adam at a constant learning rate.

    The stream is materialized once and cycled through, one
    ``(feature map, samples)`` batch per step. Initialization and the result
    are deterministic for a given ``train_config.seed``.

    Raises:
        ContractError: If the stream is empty.
        NumericalError: If a step produces a non-finite loss.
    """
    batches = [(fmap, list(samples)) for fmap, samples in stream if samples]
    if not batches:
        raise ContractError("training stream is empty")

    torch.manual_seed(train_config.seed)
    if net is None:
        net = TopoNet(net_config)
    encoded = [
        (*encode_samples(net.config, fmap, samples, net.dtype), stack_labels(samples, net.dtype))
        for fmap, samples in batches
    ]
    optimizer = torch.optim.Adam(
        net.parameters(), lr=train_config.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS
    )

    losses: List[float] = []
    net.train()
    bar = tqdm(range(train_config.steps), desc="train-topo", disable=not progress)
    for step in bar:
        inputs, valid, labels = encoded[step % len(encoded)]
        optimizer.zero_grad(set_to_none=True)
        loss = bce_loss(net.probabilities(inputs, valid), labels, valid)
        value = float(loss.item())
        if not math.isfinite(value):
            raise NumericalError(f"non-finite loss {value} at step {step}")
        loss.backward()
        optimizer.step()
        losses.append(value)
        if (step + 1) % train_config.log_every == 0:
            logger.info("step %d/%d: loss %.6f", step + 1, train_config.steps, value)
            bar.set_postfix(loss=f"{value:.4f}")
    net.eval()
    return TrainResult(net, losses)


_BOOL_TEXT = {"true": True, "false": False}


def save_params(path: PathLike, net: TopoNet) -> None:
    """Writes the decoder configuration and parameters as a bundle."""
    config = net.config
    settings = {
        "d_feat": str(config.d_feat),
        "num_heads": str(config.num_heads),
        "num_layers": str(config.num_layers),
        "ffn_multiplier": str(config.ffn_multiplier),
        "use_offsets": str(config.use_offsets).lower(),
        "use_target_features": str(config.use_target_features).lower(),
        "offset_scale": repr(float(config.offset_scale)),
    }
    if net.tuned_edge_threshold is not None:
        settings["tuned_edge_threshold"] = repr(float(net.tuned_edge_threshold))
    tensors = {
        name: tensor.detach().cpu().numpy() for name, tensor in net.state_dict().items()
    }
    write_bundle(path, settings, tensors)


def _config_from_settings(settings: Dict[str, str]) -> TopoNetConfig:
    try:
        return TopoNetConfig(
            d_feat=int(settings["d_feat"]),
            num_heads=int(settings["num_heads"]),
            num_layers=int(settings["num_layers"]),
            ffn_multiplier=int(settings["ffn_multiplier"]),
            use_offsets=_BOOL_TEXT[settings["use_offsets"]],
            use_target_features=_BOOL_TEXT[settings["use_target_features"]],
            offset_scale=float(settings["offset_scale"]),
        )
    except (KeyError, ValueError) as e:
        raise TensorFormatError(f"parameter manifest has a bad or missing setting: {e}") from e


def load_params(path: PathLike, expected_d_feat: Optional[int] = None) -> TopoNet:
    """
    Reads a decoder written by :func:`save_params`.

    Raises:
        TensorFormatError: If the file or a tensor is corrupt or missing.
        ShapeError: If a tensor's shape disagrees with the stored configuration
            or the decoder width differs from ``expected_d_feat``.
    """
    settings, tensors = read_bundle(path)
    config = _config_from_settings(settings)
    if expected_d_feat is not None and config.d_feat != expected_d_feat:
        raise ShapeError(
            f"parameters expect d_feat={config.d_feat}, features have {expected_d_feat}"
        )
    first = next(iter(tensors.values()), None)
    dtype = torch.float64 if first is not None and first.dtype == np.float64 else torch.float32
    net = TopoNet(config, dtype=dtype)
    state = net.state_dict()
    for name, reference in state.items():
        if name not in tensors:
            raise TensorFormatError(f"tensor '{name}' is missing")
        if tuple(tensors[name].shape) != tuple(reference.shape):
            raise ShapeError(
                f"tensor '{name}' has shape {tensors[name].shape}, "
                f"expected {tuple(reference.shape)}"
            )
    net.load_state_dict(
        {name: torch.as_tensor(tensors[name], dtype=dtype) for name in state}
    )
    if "tuned_edge_threshold" in settings:
        net.tuned_edge_threshold = float(settings["tuned_edge_threshold"])
    net.eval()
    return net
