"""Versioned binary model artifacts.

Layout (all integers little-endian):

    magic   b"PSM1"
    u16     format version (currently 1)
    u8      family tag
    u32     feature contract version
    u32     feature count
    ...     family payload (see below)
    u32     CRC-32 of everything after the magic

Family payloads:
    forest: train-config block, tree count, trees
    gbm:    train-config block, f64 base, u32 stage depth, tree count, trees
    linear: f64 intercept, weights/means/scales (f64 arrays), hyperparameters
Trees are node arenas: u32 count, then per node i32 feature, f64 threshold,
i32 left, i32 right, f64 value (leaves have feature == left == right == -1).

Serialization is byte-stable: training twice with one seed yields identical
artifacts. Unknown format versions and corrupt payloads are rejected.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from ..errors import ModelFormatError, ModelVersionError
from .base import TrainConfig
from .linear import LinearModel
from .trees import ForestModel, GbmModel, RegressionTree, TreeNode

MAGIC = b"PSM1"
FORMAT_VERSION = 1

_FAMILY_TAGS = {
    "forest": 1,
    "gbm": 2,
    "ridge": 3,
    "lasso": 4,
    "elastic_net": 5,
    "huber": 6,
    "ransac_base": 7,
}
_TAG_FAMILIES = {v: k for k, v in _FAMILY_TAGS.items()}

_NODE = struct.Struct("<idiid")
_CONFIG = struct.Struct("<IIIdBdIq")


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.payload):
            raise ModelFormatError("truncated model payload")
        out = self.payload[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def f64_array(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def done(self) -> bool:
        return self.pos == len(self.payload)


def _pack_tree(tree: RegressionTree) -> bytes:
    parts = [struct.pack("<I", len(tree.nodes)), struct.pack("<I", tree.max_depth)]
    for node in tree.nodes:
        parts.append(_NODE.pack(node.feature, node.threshold, node.left, node.right, node.value))
    return b"".join(parts)


def _read_tree(r: _Reader) -> RegressionTree:
    n_nodes = r.u32()
    max_depth = r.u32()
    if n_nodes == 0:
        raise ModelFormatError("tree with zero nodes")
    nodes = []
    for _ in range(n_nodes):
        feature, threshold, left, right, value = r.unpack(_NODE)
        if left >= n_nodes or right >= n_nodes:
            raise ModelFormatError("tree child index out of range")
        nodes.append(TreeNode(feature, threshold, left, right, value))
    return RegressionTree(tuple(nodes), max_depth)


def _pack_config(c: TrainConfig) -> bytes:
    return _CONFIG.pack(
        c.n_trees,
        c.max_depth,
        c.min_leaf,
        c.features_per_split,
        1 if c.bootstrap else 0,
        c.learning_rate,
        c.n_stages,
        c.seed,
    )


def _read_config(r: _Reader) -> TrainConfig:
    n_trees, max_depth, min_leaf, fps, bootstrap, lr, n_stages, seed = r.unpack(_CONFIG)
    try:
        return TrainConfig(n_trees, max_depth, min_leaf, fps, bool(bootstrap), lr, n_stages, seed)
    except ValueError as exc:
        raise ModelFormatError(f"invalid train config in payload: {exc}")


def _pack_f64s(values: np.ndarray) -> bytes:
    return np.asarray(values, dtype="<f8").tobytes()


def serialize_model(model) -> bytes:
    """Encode a trained model into the versioned artifact format."""
    if isinstance(model, ForestModel):
        family = "forest"
        payload = [_pack_config(model.config), struct.pack("<I", len(model.trees))]
        payload += [_pack_tree(t) for t in model.trees]
    elif isinstance(model, GbmModel):
        family = "gbm"
        payload = [
            _pack_config(model.config),
            struct.pack("<d", model.base),
            struct.pack("<I", model.stage_depth),
            struct.pack("<I", len(model.trees)),
        ]
        payload += [_pack_tree(t) for t in model.trees]
    elif isinstance(model, LinearModel):
        family = model.family
        if family not in _FAMILY_TAGS:
            raise ValueError(f"unknown linear family {family!r}")
        hypers = sorted(model.hyperparameters.items())
        payload = [
            struct.pack("<d", model.intercept),
            _pack_f64s(model.weights),
            _pack_f64s(model.means),
            _pack_f64s(model.scales),
            struct.pack("<B", len(hypers)),
        ]
        for key, value in hypers:
            raw = key.encode("utf-8")
            payload.append(struct.pack("<B", len(raw)) + raw + struct.pack("<d", float(value)))
    else:
        raise ValueError(f"cannot serialize {type(model).__name__}")

    body = (
        struct.pack("<H", FORMAT_VERSION)
        + struct.pack("<B", _FAMILY_TAGS[family])
        + struct.pack("<I", model.feature_contract)
        + struct.pack("<I", model.n_features)
        + b"".join(payload)
    )
    return MAGIC + body + struct.pack("<I", zlib.crc32(body))


def deserialize_model(blob: bytes):
    """Decode a model artifact; rejects unknown versions and corrupt payloads."""
    if len(blob) < len(MAGIC) + 2 + 4 or blob[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model artifact (bad magic)")
    version = struct.unpack("<H", blob[4:6])[0]
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"unknown model format version {version}")
    body, crc_raw = blob[4:-4], blob[-4:]
    if struct.pack("<I", zlib.crc32(body)) != crc_raw:
        raise ModelFormatError("model payload failed its checksum")

    r = _Reader(body[2:])  # version already consumed
    tag = r.u8()
    family = _TAG_FAMILIES.get(tag)
    if family is None:
        raise ModelFormatError(f"unknown model family tag {tag}")
    contract = r.u32()
    n_features = r.u32()

    if family == "forest":
        config = _read_config(r)
        n_trees = r.u32()
        trees = tuple(_read_tree(r) for _ in range(n_trees))
        model = ForestModel(trees, config, contract, n_features)
    elif family == "gbm":
        config = _read_config(r)
        base = r.f64()
        stage_depth = r.u32()
        n_trees = r.u32()
        trees = tuple(_read_tree(r) for _ in range(n_trees))
        model = GbmModel(
            base, trees, config.learning_rate, config, contract, n_features, stage_depth
        )
    else:
        intercept = r.f64()
        weights = r.f64_array(n_features)
        means = r.f64_array(n_features)
        scales = r.f64_array(n_features)
        hypers = {}
        for _ in range(r.u8()):
            klen = r.u8()
            key = r.take(klen).decode("utf-8")
            hypers[key] = r.f64()
        model = LinearModel(family, weights, intercept, means, scales, hypers, contract)

    if not r.done():
        raise ModelFormatError("trailing bytes after model payload")
    return model
