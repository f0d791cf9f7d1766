"""Connectivity machinery and architecture builders.

An :class:`ArchitectureSpec` is a validated, serializable stage list; a
:class:`Network` is the corresponding tower of live layers. The three
connectivity modes for uniform stacks are plain (straight composition),
residual (identity shortcut around every layer whose input and output dims
match), and dense (blocks with intra-block all-to-all concatenation, linked
by affine+ReLU transitional layers).
"""

from __future__ import annotations

import hashlib
import json

from .errors import ConfigurationError, DimensionError
from .layers import (AffineLayer, BlstmLayer, Conv2dLayer, DenseBlock,
                     FlattenImage, LstmLayer, ResidualWrap, SoftmaxOutput,
                     TdnnLayer, ToImage)
from .tensor import Rng, derive_seed

CONNECTIVITY_MODES = ("plain", "residual", "dense")


class ArchitectureSpec:
    """Ordered stage list plus the input feature dim; meta is free-form notes.

    Stages are plain dicts (JSON-ready). ``meta`` is excluded from the
    fingerprint so annotations never silently change model identity.
    """

    def __init__(self, input_dim, stages, meta=None):
        self.input_dim = int(input_dim)
        self.stages = list(stages)
        self.meta = dict(meta or {})
        self.validate()

    # -- shape walk ------------------------------------------------------

    def validate(self):
        """Walk stage dims; raises on any incompatibility. Returns per-stage out dims."""
        if self.input_dim < 1:
            raise ConfigurationError("input_dim must be positive")
        if not self.stages:
            raise ConfigurationError("architecture needs at least one stage")
        cur = self.input_dim
        dims = []
        for pos, stage in enumerate(self.stages):
            cur = _stage_out(stage, cur, pos)
            dims.append(cur)
        last = self.stages[-1]
        if last.get("kind") != "softmax":
            raise ConfigurationError("final stage must be softmax")
        for stage in self.stages[:-1]:
            if stage.get("kind") == "softmax":
                raise ConfigurationError("softmax allowed only as the final stage")
        return dims

    @property
    def classes(self):
        return self.stages[-1]["classes"]

    def layer_census(self):
        """Count primitive layers by kind, looking inside dense blocks."""
        census = {}

        def bump(kind):
            census[kind] = census.get(kind, 0) + 1

        for stage in self.stages:
            if stage["kind"] == "dense_block":
                for inner in stage["layers"]:
                    bump(inner["kind"])
            else:
                bump(stage["kind"])
        return census

    # -- serialization ---------------------------------------------------

    def to_json(self):
        return json.dumps({"input_dim": self.input_dim, "stages": self.stages,
                           "meta": self.meta}, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"bad architecture document: {exc}") from exc
        if not isinstance(doc, dict) or "input_dim" not in doc or "stages" not in doc:
            raise ConfigurationError("architecture document needs input_dim and stages")
        return cls(doc["input_dim"], doc["stages"], doc.get("meta"))

    def fingerprint(self):
        payload = json.dumps({"input_dim": self.input_dim, "stages": self.stages},
                             sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


def _stage_out(stage, cur, pos):
    """Output dim of ``stage`` given current dim ``cur`` (int or (feat, channels))."""
    kind = stage.get("kind")

    def need_flat():
        if not isinstance(cur, int):
            raise DimensionError(f"stage {pos} ({kind}) needs flat features, has image {cur}")

    def need(field):
        if field not in stage:
            raise ConfigurationError(f"stage {pos} ({kind}) missing field {field!r}")
        return stage[field]

    if kind in ("affine", "transition", "tdnn"):
        need_flat()
        if need("in") != cur:
            raise DimensionError(f"stage {pos} ({kind}) expects dim {stage['in']}, gets {cur}")
        return need("out")
    if kind in ("lstm", "blstm"):
        need_flat()
        if need("in") != cur:
            raise DimensionError(f"stage {pos} ({kind}) expects dim {stage['in']}, gets {cur}")
        d = need("d")
        if kind == "lstm" and stage.get("residual") and cur != d:
            raise DimensionError(f"stage {pos}: residual lstm needs in == d, got {cur} != {d}")
        return d if kind == "lstm" else 2 * d
    if kind == "to_image":
        need_flat()
        if need("in") != cur:
            raise DimensionError(f"stage {pos} (to_image) expects dim {stage['in']}, gets {cur}")
        return (cur, 1)
    if kind == "conv2d":
        if not (isinstance(cur, tuple) and len(cur) == 2):
            raise DimensionError(f"stage {pos} (conv2d) needs image input, has {cur}")
        feat, channels = cur
        if need("feat") != feat or need("in_channels") != channels:
            raise DimensionError(
                f"stage {pos} (conv2d) expects image ({stage['feat']},{stage['in_channels']}),"
                f" gets ({feat},{channels})")
        return (feat, need("filters"))
    if kind == "flatten_image":
        if not (isinstance(cur, tuple) and cur == (need("feat"), need("channels"))):
            raise DimensionError(f"stage {pos} (flatten_image) expects image "
                                 f"({stage['feat']},{stage['channels']}), gets {cur}")
        return cur[0] * cur[1]
    if kind == "dense_block":
        need_flat()
        if need("in") != cur:
            raise DimensionError(f"stage {pos} (dense_block) expects dim {stage['in']}, gets {cur}")
        inner_dims = [cur]
        for j, inner in enumerate(need("layers")):
            want = sum(inner_dims)
            got = inner.get("in")
            if got != want:
                raise DimensionError(
                    f"stage {pos} block layer {j} must consume dim {want}, declares {got}")
            inner_dims.append(_stage_out(inner, want, pos))
        if len(inner_dims) == 1:
            raise ConfigurationError(f"stage {pos}: dense block needs at least one layer")
        return sum(inner_dims[1:])
    if kind == "softmax":
        need_flat()
        if need("in") != cur:
            raise DimensionError(f"stage {pos} (softmax) expects dim {stage['in']}, gets {cur}")
        k = need("classes")
        if k < 2:
            raise ConfigurationError("softmax needs at least 2 classes")
        return k
    raise ConfigurationError(f"stage {pos}: unknown kind {kind!r}")


# ---------------------------------------------------------------- network

def _make_layer(stage):
    kind = stage["kind"]
    if kind == "affine":
        return AffineLayer(stage["in"], stage["out"], use_relu=bool(stage.get("relu")))
    if kind == "transition":
        return AffineLayer(stage["in"], stage["out"], use_relu=True)
    if kind == "lstm":
        layer = LstmLayer(stage["in"], stage["d"])
        if stage.get("residual"):
            return ResidualWrap(layer, stage["in"])
        return layer
    if kind == "blstm":
        return BlstmLayer(stage["in"], stage["d"])
    if kind == "tdnn":
        return TdnnLayer(stage["in"], stage["out"], offsets=tuple(stage["offsets"]))
    if kind == "to_image":
        return ToImage(stage["in"])
    if kind == "conv2d":
        return Conv2dLayer(stage["in_channels"], filters=stage["filters"],
                           kernel=tuple(stage.get("kernel", (3, 3))))
    if kind == "flatten_image":
        return FlattenImage(stage["feat"], stage["channels"])
    if kind == "dense_block":
        inner = [_make_layer(s) for s in stage["layers"]]
        return DenseBlock(inner, stage["in"])
    if kind == "softmax":
        return SoftmaxOutput(stage["in"], stage["classes"])
    raise ConfigurationError(f"unknown stage kind {kind!r}")


class Network:
    """Live layer tower for an ArchitectureSpec.

    ``forward`` returns per-frame log-probs and the cache list; ``backward``
    takes the gradient w.r.t. the softmax logits (the natural output of the
    losses in this package) and returns gradients keyed like ``params()``.
    """

    def __init__(self, spec):
        spec.validate()
        self.spec = spec
        self.layers = [_make_layer(stage) for stage in spec.stages]

    def init_params(self, seed):
        for idx, layer in enumerate(self.layers):
            layer.init_params(Rng(derive_seed(seed, "layer", idx)))

    def params(self):
        out = {}
        for idx, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"s{idx:02d}.{name}"] = arr
        return out

    def forward(self, x):
        caches = []
        cur = x
        for layer in self.layers:
            cur, cache = layer.forward(cur)
            caches.append(cache)
        return cur, caches

    def log_probs(self, x):
        out, _ = self.forward(x)
        return out

    def backward(self, caches, dlogits):
        grads = {}
        cur = dlogits
        for idx in range(len(self.layers) - 1, -1, -1):
            cur, layer_grads = self.layers[idx].backward(caches[idx], cur)
            for name, arr in layer_grads.items():
                grads[f"s{idx:02d}.{name}"] = arr
        return grads


def build_network(spec, seed=None):
    net = Network(spec)
    if seed is not None:
        net.init_params(seed)
    return net


# ---------------------------------------------------------------- builders

def _lstm_stage(in_dim, d, residual=False):
    stage = {"kind": "lstm", "in": in_dim, "d": d}
    if residual:
        stage["residual"] = True
    return stage


def build_stack(mode, depth, cell_dim, classes, input_dim, block_size=None):
    """Uniform recurrent stack in one of the three connectivity modes.

    plain: straight composition of ``depth`` LSTMs. residual: identity
    shortcuts around every layer whose input dim equals its cell dim (the
    first layer is unwrapped whenever the feature dim differs). dense:
    ceil(depth / block_size) blocks with intra-block concatenation, an
    affine adapter in front when input_dim != cell_dim, and transitional
    layers (projecting back to cell_dim) between blocks only.
    """
    if mode not in CONNECTIVITY_MODES:
        raise ConfigurationError(f"unknown connectivity mode {mode!r}")
    if depth < 1:
        raise ConfigurationError("depth must be >= 1")
    if cell_dim < 1:
        raise ConfigurationError("cell_dim must be >= 1")
    stages = []
    meta = {"builder": "stack", "mode": mode, "depth": depth}
    d = cell_dim
    if mode in ("plain", "residual"):
        cur = input_dim
        for _ in range(depth):
            residual = mode == "residual" and cur == d
            stages.append(_lstm_stage(cur, d, residual=residual))
            cur = d
        stages.append({"kind": "softmax", "in": d, "classes": classes})
        return ArchitectureSpec(input_dim, stages, meta)

    if not block_size or block_size < 1:
        raise ConfigurationError("dense mode needs a positive block_size")
    cur = input_dim
    if cur != d:
        stages.append({"kind": "affine", "in": cur, "out": d, "relu": False})
        cur = d
    sizes = [block_size] * (depth // block_size)
    if depth % block_size:
        sizes.append(depth % block_size)
    for bi, size in enumerate(sizes):
        inner = []
        in_dim = cur
        for _ in range(size):
            inner.append(_lstm_stage(in_dim, d))
            in_dim += d
        stages.append({"kind": "dense_block", "in": cur, "layers": inner})
        cur = size * d
        if bi + 1 < len(sizes):  # transitional layer between blocks only
            stages.append({"kind": "transition", "in": cur, "out": d})
            cur = d
    stages.append({"kind": "softmax", "in": cur, "classes": classes})
    return ArchitectureSpec(input_dim, stages, meta)


def build_dense_tdnn_lstm(classes, input_dim, tdnn_dim=1024, lstm_dim=512,
                          block_tdnn_dim=256, transition_dim=1024,
                          offsets=(-1, 0, 1)):
    """Seven TDNN and three LSTM layers: a 3-TDNN front end, two dense
    blocks of (1 LSTM + 2 TDNNs) each followed by a transitional layer, and
    a final LSTM before the softmax. Default dims make each block's
    concatenated output and each transitional layer 1,024-wide.
    """
    offs = list(offsets)
    stages = []
    cur = input_dim
    for _ in range(3):
        stages.append({"kind": "tdnn", "in": cur, "out": tdnn_dim, "offsets": offs})
        cur = tdnn_dim
    for _ in range(2):
        inner = [_lstm_stage(cur, lstm_dim),
                 {"kind": "tdnn", "in": cur + lstm_dim, "out": block_tdnn_dim, "offsets": offs},
                 {"kind": "tdnn", "in": cur + lstm_dim + block_tdnn_dim,
                  "out": block_tdnn_dim, "offsets": offs}]
        stages.append({"kind": "dense_block", "in": cur, "layers": inner})
        cur = lstm_dim + 2 * block_tdnn_dim
        stages.append({"kind": "transition", "in": cur, "out": transition_dim})
        cur = transition_dim
    stages.append(_lstm_stage(cur, lstm_dim))
    stages.append({"kind": "softmax", "in": lstm_dim, "classes": classes})
    return ArchitectureSpec(input_dim, stages, {"builder": "dense_tdnn_lstm"})


def build_dense_cnn_blstm(classes, input_dim, n_blocks, layers_per_block,
                          cell_dims, filters=32, transition_dim=256,
                          use_transitions=True):
    """Three 3x3 conv layers, then n_blocks dense blocks of bidirectional
    LSTMs. cell_dims is one dim per block (or a scalar); transitional layers
    sit between blocks unless use_transitions is off (blocks then feed their
    concatenated output straight into the next block).
    """
    if isinstance(cell_dims, int):
        cell_dims = [cell_dims] * n_blocks
    cell_dims = list(cell_dims)
    if len(cell_dims) != n_blocks:
        raise ConfigurationError(
            f"need one cell dim per block: {n_blocks} blocks, {len(cell_dims)} dims")
    if n_blocks < 1 or layers_per_block < 1:
        raise ConfigurationError("n_blocks and layers_per_block must be >= 1")
    stages = [{"kind": "to_image", "in": input_dim}]
    channels = 1
    for _ in range(3):
        stages.append({"kind": "conv2d", "feat": input_dim, "in_channels": channels,
                       "filters": filters, "kernel": [3, 3]})
        channels = filters
    stages.append({"kind": "flatten_image", "feat": input_dim, "channels": channels})
    cur = input_dim * channels
    for bi, d in enumerate(cell_dims):
        inner = []
        in_dim = cur
        for _ in range(layers_per_block):
            inner.append({"kind": "blstm", "in": in_dim, "d": d})
            in_dim += 2 * d
        stages.append({"kind": "dense_block", "in": cur, "layers": inner})
        cur = layers_per_block * 2 * d
        if use_transitions and bi + 1 < n_blocks:
            stages.append({"kind": "transition", "in": cur, "out": transition_dim})
            cur = transition_dim
    stages.append({"kind": "softmax", "in": cur, "classes": classes})
    meta = {"builder": "dense_cnn_blstm", "n_blocks": n_blocks,
            "layers_per_block": layers_per_block}
    return ArchitectureSpec(input_dim, stages, meta)
