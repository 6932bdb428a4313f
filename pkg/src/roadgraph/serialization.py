"""Readers and writers for the on-disk formats: RGT1 tensors, graph JSON
documents, parameter bundles and dataset ``meta.txt`` files."""

import json
import struct
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt

from .constants import BUNDLE_MAGIC, DTYPE_CODES, FEATURE_SCALE, TENSOR_MAGIC
from .data_classes import FeatureMap, ProbMask, RoadGraph
from .exceptions import ContractError, DataIOError, ShapeError, TensorFormatError
from .typing import ManifestEntry, SceneMeta

PathLike = Union[str, bytes]

_HEADER = struct.Struct("<4sII")
_DIM = struct.Struct("<Q")
_BUNDLE_HEADER = struct.Struct("<4sQ")


def _dtype_code(array: npt.NDArray[Any]) -> int:
    for code, dtype in DTYPE_CODES.items():
        expected = np.dtype(dtype)
        if (array.dtype.kind, array.dtype.itemsize) == (expected.kind, expected.itemsize):
            return code
    raise TensorFormatError(f"unsupported tensor dtype {array.dtype}")


def encode_tensor(array: npt.NDArray[Any]) -> bytes:
    """
    Encodes an array as an RGT1 record.

    Layout (little-endian): magic ``RGT1``, u32 dtype code, u32 ndim,
    ndim x u64 dimensions, then the row-major payload.
    """
    code = _dtype_code(array)
    payload = np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()
    dims = b"".join(_DIM.pack(int(dim)) for dim in array.shape)
    return _HEADER.pack(TENSOR_MAGIC, code, array.ndim) + dims + payload


def decode_tensor(
    buffer: bytes, offset: int = 0, name: str = "tensor"
) -> Tuple[npt.NDArray[Any], int]:
    """
    Decodes one RGT1 record starting at ``offset``.

    Returns:
        tuple: The array and the offset just past the record.

    Raises:
        TensorFormatError: If the record is corrupt or truncated.
    """
    if len(buffer) - offset < _HEADER.size:
        raise TensorFormatError(f"{name}: truncated header")
    magic, code, ndim = _HEADER.unpack_from(buffer, offset)
    if magic != TENSOR_MAGIC:
        raise TensorFormatError(f"{name}: bad magic {magic!r}")
    if code not in DTYPE_CODES:
        raise TensorFormatError(f"{name}: unknown dtype code {code}")
    offset += _HEADER.size
    if len(buffer) - offset < ndim * _DIM.size:
        raise TensorFormatError(f"{name}: truncated dimensions")
    dims = [_DIM.unpack_from(buffer, offset + i * _DIM.size)[0] for i in range(ndim)]
    offset += ndim * _DIM.size

    dtype = np.dtype(DTYPE_CODES[code])
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buffer) - offset < nbytes:
        raise TensorFormatError(f"{name}: truncated payload")
    array = np.frombuffer(buffer, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
    return array.reshape(dims).copy(), offset + nbytes


def _read_bytes(path: PathLike) -> bytes:
    try:
        with open(path, "rb") as file:
            return file.read()
    except OSError as e:
        raise DataIOError(f"cannot read {path!r}: {e.strerror}") from e


def _decode_text(path: PathLike, data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise TensorFormatError(f"{path!r}: not UTF-8 text") from e


def _write_bytes(path: PathLike, data: bytes) -> None:
    try:
        with open(path, "wb") as file:
            file.write(data)
    except OSError as e:
        raise DataIOError(f"cannot write {path!r}: {e.strerror}") from e


def write_tensor(path: PathLike, array: npt.NDArray[Any]) -> None:
    """Writes a single array as an RGT1 file."""
    _write_bytes(path, encode_tensor(array))


def read_tensor(path: PathLike) -> npt.NDArray[Any]:
    """Reads a single-array RGT1 file."""
    array, _ = decode_tensor(_read_bytes(path), name=str(path))
    return array


def save_mask(path: PathLike, mask: ProbMask) -> None:
    """Writes a mask as a float32 (H, W, 2) tensor."""
    write_tensor(path, mask.data.astype(np.float32))


def load_mask(path: PathLike) -> ProbMask:
    """Reads a mask written by :func:`save_mask`."""
    array = read_tensor(path)
    if array.ndim != 3 or array.shape[2] != 2:
        raise ShapeError(f"{path!r}: expected (H, W, 2) mask, got {array.shape}")
    return ProbMask(array.astype(np.float32))


def save_features(path: PathLike, fmap: FeatureMap) -> None:
    """Writes a feature map as a float32 (Hf, Wf, D) tensor."""
    write_tensor(path, fmap.data.astype(np.float32))


def load_features(path: PathLike, scale: int = FEATURE_SCALE) -> FeatureMap:
    """Reads a feature map written by :func:`save_features`."""
    array = read_tensor(path)
    if array.ndim != 3:
        raise ShapeError(f"{path!r}: expected (Hf, Wf, D) features, got {array.shape}")
    return FeatureMap(array, scale=scale)


def graph_to_json(graph: RoadGraph) -> str:
    """Serializes a graph as ``{"vertices": [[x, y], ...], "edges": [[i, j], ...]}``."""
    return json.dumps(
        {"vertices": graph.vertices.tolist(), "edges": graph.edges.tolist()}
    )


def graph_from_json(text: str) -> RoadGraph:
    """Parses a document produced by :func:`graph_to_json`."""
    try:
        document = json.loads(text)
        return RoadGraph.from_lists(document["vertices"], document["edges"])
    except ContractError:
        raise
    except (ValueError, KeyError, TypeError) as e:
        raise TensorFormatError(f"malformed graph document: {e}") from e


def save_graph(path: PathLike, graph: RoadGraph) -> None:
    """Writes a graph file."""
    _write_bytes(path, graph_to_json(graph).encode("utf-8"))


def load_graph(path: PathLike) -> RoadGraph:
    """Reads a graph file."""
    return graph_from_json(_decode_text(path, _read_bytes(path)))


def write_bundle(
    path: PathLike, config: Dict[str, str], tensors: Dict[str, npt.NDArray[Any]]
) -> None:
    """
    Writes named tensors plus string settings as one parameter bundle.

    The bundle starts with magic ``RGTB`` and a u64 manifest length, followed
    by a plain-text manifest (``config key=value`` and
    ``tensor name dtype d0,d1,...`` lines) and one RGT1 record per tensor in
    manifest order.
    """
    lines = [f"config {key}={value}" for key, value in config.items()]
    records = []
    for name, array in tensors.items():
        dims = ",".join(str(dim) for dim in array.shape)
        lines.append(f"tensor {name} {_dtype_code(array)} {dims}")
        records.append(encode_tensor(array))
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    _write_bytes(
        path, _BUNDLE_HEADER.pack(BUNDLE_MAGIC, len(manifest)) + manifest + b"".join(records)
    )


def parse_manifest(text: str) -> Tuple[Dict[str, str], List[ManifestEntry]]:
    """Splits a bundle manifest into its settings and its tensor entries."""
    config: Dict[str, str] = {}
    entries: List[ManifestEntry] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        kind, _, rest = line.partition(" ")
        if kind == "config":
            key, sep, value = rest.partition("=")
            if not sep:
                raise TensorFormatError(f"malformed manifest line: {line!r}")
            config[key] = value
        elif kind == "tensor":
            parts = rest.split(" ")
            if len(parts) != 3:
                raise TensorFormatError(f"malformed manifest line: {line!r}")
            try:
                dims = [int(dim) for dim in parts[2].split(",") if dim]
                code = int(parts[1])
            except ValueError as e:
                raise TensorFormatError(f"malformed manifest line: {line!r}") from e
            entries.append({"name": parts[0], "dtype": code, "dims": dims})
        else:
            raise TensorFormatError(f"malformed manifest line: {line!r}")
    return config, entries


def read_bundle(
    path: PathLike,
) -> Tuple[Dict[str, str], Dict[str, npt.NDArray[Any]]]:
    """
    Reads a parameter bundle.

    Raises:
        TensorFormatError: If the manifest or any tensor is corrupt, missing or
            disagrees with its manifest entry; the message names the tensor.
    """
    buffer = _read_bytes(path)
    if len(buffer) < _BUNDLE_HEADER.size:
        raise TensorFormatError(f"{path!r}: truncated bundle header")
    magic, manifest_length = _BUNDLE_HEADER.unpack_from(buffer, 0)
    if magic != BUNDLE_MAGIC:
        raise TensorFormatError(f"{path!r}: bad bundle magic {magic!r}")
    offset = _BUNDLE_HEADER.size
    if len(buffer) - offset < manifest_length:
        raise TensorFormatError(f"{path!r}: truncated manifest")
    try:
        manifest = buffer[offset : offset + manifest_length].decode("utf-8")
    except UnicodeDecodeError as e:
        raise TensorFormatError(f"{path!r}: manifest is not UTF-8") from e
    offset += manifest_length

    config, entries = parse_manifest(manifest)
    tensors: Dict[str, npt.NDArray[Any]] = {}
    for entry in entries:
        if offset >= len(buffer):
            raise TensorFormatError(f"tensor '{entry['name']}' is missing")
        array, offset = decode_tensor(buffer, offset, name=f"tensor '{entry['name']}'")
        if list(array.shape) != entry["dims"] or _dtype_code(array) != entry["dtype"]:
            raise TensorFormatError(
                f"tensor '{entry['name']}' disagrees with its manifest entry"
            )
        tensors[entry["name"]] = array
    return config, tensors


_META_INT_KEYS = (
    "image_width",
    "image_height",
    "window_size",
    "count_x",
    "count_y",
    "feature_scale",
    "feature_dim",
    "seed",
)


def write_meta(path: PathLike, meta: SceneMeta) -> None:
    """Writes a dataset ``meta.txt`` as ``key = value`` lines."""
    text = "".join(f"{key} = {value}\n" for key, value in meta.items())
    _write_bytes(path, text.encode("utf-8"))


def read_meta(path: PathLike, defaults: Optional[Dict[str, int]] = None) -> SceneMeta:
    """Reads a dataset ``meta.txt``."""
    values: Dict[str, int] = dict(defaults or {})
    for raw in _decode_text(path, _read_bytes(path)).splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ContractError(f"{path!r}: malformed line {raw!r}")
        try:
            values[key.strip()] = int(value.strip())
        except ValueError as e:
            raise ContractError(f"{path!r}: {key.strip()} must be an integer") from e
    missing = [key for key in _META_INT_KEYS if key not in values]
    if missing:
        raise ContractError(f"{path!r}: missing keys {', '.join(missing)}")
    return {key: values[key] for key in _META_INT_KEYS}  # type: ignore[return-value]
