"""Network description and the manifest + raw-f32 container format.

A model on disk is two files: a UTF-8 JSON manifest describing the layer
stack and tensor table, and a headerless blob of little-endian float32
values.  Loading widens everything to float64 and folds batch-norm layers
into the preceding convolution so relevance rules only ever see affine,
pooling and activation layers.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .tensor import ShapeError, Tensor

FORMAT_VERSION = 1

AFFINE_KINDS = ("conv2d", "dense")
POOL_KINDS = ("maxPool2d", "avgPool2d")

# kind -> (hyperparameter fields, required param roles, optional param roles)
LAYER_KINDS: dict[str, tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]] = {
    "conv2d": (
        ("in_channels", "out_channels", "kernel_h", "kernel_w",
         "stride_h", "stride_w", "pad_h", "pad_w"),
        ("weight",),
        ("bias",),
    ),
    "dense": (("in_features", "out_features"), ("weight",), ("bias",)),
    "relu": ((), (), ()),
    "leakyRelu": (("alpha",), (), ()),
    "maxPool2d": (("window", "stride"), (), ()),
    "avgPool2d": (("window", "stride"), (), ()),
    "flatten": ((), (), ()),
    "sigmoid": ((), (), ()),
    "batchNorm2d": (("channels", "epsilon"), ("gamma", "beta", "running_mean", "running_var"), ()),
}

_FLOAT_HYPER = {"alpha", "epsilon"}


class ModelFormatError(ValueError):
    """Base class for everything that can go wrong reading or validating a model."""


class ManifestParseError(ModelFormatError):
    pass


class BoundsError(ModelFormatError):
    pass


class ModelShapeError(ModelFormatError, ShapeError):
    pass


class DtypeError(ModelFormatError):
    pass


class StructuralError(ModelFormatError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    hyper: Mapping[str, Any] = field(default_factory=dict)
    params: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise StructuralError(f"unknown layer kind {self.kind!r}")
        fields, required, optional = LAYER_KINDS[self.kind]
        missing = [f for f in fields if f not in self.hyper]
        if missing:
            raise StructuralError(f"{self.kind} layer missing fields {missing}")
        extra = set(self.hyper) - set(fields)
        if extra:
            raise StructuralError(f"{self.kind} layer has unknown fields {sorted(extra)}")
        for role in required:
            if role not in self.params:
                raise StructuralError(f"{self.kind} layer missing parameter role {role!r}")
        unknown_roles = set(self.params) - set(required) - set(optional)
        if unknown_roles:
            raise StructuralError(f"{self.kind} layer has unknown roles {sorted(unknown_roles)}")
        hyper = {}
        for name in fields:
            value = self.hyper[name]
            if name in _FLOAT_HYPER:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise StructuralError(f"{self.kind}.{name} must be a number")
                hyper[name] = float(value)
            else:
                if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                    raise StructuralError(f"{self.kind}.{name} must be an integer")
                hyper[name] = int(value)
        object.__setattr__(self, "hyper", hyper)
        object.__setattr__(self, "params", dict(self.params))

    def __getitem__(self, name):
        return self.hyper[name]


def _conv_out(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def layer_output_shape(layer: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape produced by ``layer`` for input ``in_shape``; raises on mismatch."""
    k = layer.kind
    h = layer.hyper
    if k == "conv2d":
        if len(in_shape) != 3 or in_shape[0] != h["in_channels"]:
            raise ModelShapeError(f"conv2d expects [{h['in_channels']},H,W], got {list(in_shape)}")
        if min(h["stride_h"], h["stride_w"], h["kernel_h"], h["kernel_w"]) < 1 or min(h["pad_h"], h["pad_w"]) < 0:
            raise ModelShapeError("conv2d needs positive kernel/stride and nonnegative padding")
        oh = _conv_out(in_shape[1], h["kernel_h"], h["stride_h"], h["pad_h"])
        ow = _conv_out(in_shape[2], h["kernel_w"], h["stride_w"], h["pad_w"])
        if oh < 1 or ow < 1:
            raise ModelShapeError(f"conv2d kernel larger than padded input {list(in_shape)}")
        return (h["out_channels"], oh, ow)
    if k == "dense":
        if len(in_shape) != 1 or in_shape[0] != h["in_features"]:
            raise ModelShapeError(f"dense expects [{h['in_features']}], got {list(in_shape)}")
        return (h["out_features"],)
    if k in POOL_KINDS:
        if len(in_shape) != 3:
            raise ModelShapeError(f"{k} expects [C,H,W], got {list(in_shape)}")
        if h["window"] < 1 or h["stride"] < 1:
            raise ModelShapeError(f"{k} needs positive window and stride")
        oh = _conv_out(in_shape[1], h["window"], h["stride"], 0)
        ow = _conv_out(in_shape[2], h["window"], h["stride"], 0)
        if oh < 1 or ow < 1:
            raise ModelShapeError(f"{k} window larger than input {list(in_shape)}")
        return (in_shape[0], oh, ow)
    if k == "batchNorm2d":
        if len(in_shape) != 3 or in_shape[0] != h["channels"]:
            raise ModelShapeError(f"batchNorm2d expects [{h['channels']},H,W], got {list(in_shape)}")
        return in_shape
    if k == "flatten":
        return (int(np.prod(in_shape)),)
    if k == "leakyRelu" and not 0.0 < h["alpha"] < 1.0:
        raise ModelShapeError(f"leakyRelu alpha must lie in (0, 1), got {h['alpha']}")
    return in_shape


def _expected_param_shapes(layer: LayerSpec) -> dict[str, tuple[int, ...]]:
    h = layer.hyper
    if layer.kind == "conv2d":
        return {"weight": (h["out_channels"], h["in_channels"], h["kernel_h"], h["kernel_w"]),
                "bias": (h["out_channels"],)}
    if layer.kind == "dense":
        return {"weight": (h["out_features"], h["in_features"]), "bias": (h["out_features"],)}
    if layer.kind == "batchNorm2d":
        c = (h["channels"],)
        return {"gamma": c, "beta": c, "running_mean": c, "running_var": c}
    return {}


@dataclass(frozen=True)
class NetworkModel:
    """A validated discriminator: layer stack, named parameters, metadata.

    Construction checks every shape invariant, so holding a NetworkModel
    means the stack can be run on inputs of ``input_shape``.
    """

    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    parameters: Mapping[str, Tensor]
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "parameters",
                           {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in self.parameters.items()})
        object.__setattr__(self, "metadata", {str(k): str(v) for k, v in self.metadata.items()})
        self._validate()

    def _validate(self):
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ModelShapeError(f"input_shape must be [C,H,W] with positive extents, got {list(self.input_shape)}")
        if len(self.layers) < 2 or self.layers[-1].kind != "sigmoid" or self.layers[-2].kind != "dense" \
                or self.layers[-2].hyper["out_features"] != 1:
            raise StructuralError("a discriminator must end with dense(out_features=1) followed by sigmoid")
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            for role, expected in _expected_param_shapes(layer).items():
                if role not in layer.params:
                    continue
                name = layer.params[role]
                if name not in self.parameters:
                    raise StructuralError(f"layer {i} ({layer.kind}) references missing tensor {name!r}")
                got = self.parameters[name].shape
                if got != expected:
                    raise ModelShapeError(
                        f"layer {i} ({layer.kind}) {role} has shape {list(got)}, expected {list(expected)}")
            if layer.kind == "batchNorm2d":
                var = self.parameters[layer.params["running_var"]].array
                if np.any(var <= 0):
                    raise ModelShapeError(f"layer {i} batchNorm2d running_var must be > 0")
                if layer.hyper["epsilon"] < 0:
                    raise ModelShapeError(f"layer {i} batchNorm2d epsilon must be >= 0")
            try:
                shape = layer_output_shape(layer, shape)
            except ModelShapeError as exc:
                raise ModelShapeError(f"layer {i}: {exc}") from None

    def layer_shapes(self) -> list[tuple[int, ...]]:
        """Input shape of every layer, followed by the final output shape."""
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer_output_shape(layer, shapes[-1]))
        return shapes

    def layer_params(self, index: int) -> dict[str, np.ndarray]:
        """Parameter arrays of layer ``index`` keyed by role; missing biases are zeros."""
        layer = self.layers[index]
        out = {role: self.parameters[name].array for role, name in layer.params.items()}
        if layer.kind in AFFINE_KINDS and "bias" not in out:
            n = layer.hyper["out_channels"] if layer.kind == "conv2d" else layer.hyper["out_features"]
            out["bias"] = np.zeros(n)
        return out

    @property
    def iteration(self) -> str | None:
        return self.metadata.get("iteration")


class ModelBuilder:
    """Incrementally assemble a :class:`NetworkModel` from numpy arrays.

    >>> b = ModelBuilder((1, 1, 2))
    >>> b.flatten().dense([[2.0, -1.0]], [0.0]).sigmoid()  # doctest: +ELLIPSIS
    <...ModelBuilder object at ...>
    >>> b.build().layers[-1].kind
    'sigmoid'
    """

    def __init__(self, input_shape: Sequence[int]):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers: list[LayerSpec] = []
        self.parameters: dict[str, np.ndarray] = {}

    def _add(self, kind, hyper=None, **tensors):
        idx = len(self.layers)
        params = {}
        for role, value in tensors.items():
            if value is None:
                continue
            name = f"layer{idx}.{role}"
            self.parameters[name] = np.asarray(value, dtype=np.float64)
            params[role] = name
        self.layers.append(LayerSpec(kind, hyper or {}, params))
        return self

    def conv2d(self, weight, bias=None, stride=1, padding=0):
        w = np.asarray(weight, dtype=np.float64)
        if w.ndim != 4:
            raise ModelShapeError(f"conv2d weight must be rank 4, got shape {list(w.shape)}")
        sh, sw = (stride, stride) if np.isscalar(stride) else stride
        ph, pw = (padding, padding) if np.isscalar(padding) else padding
        return self._add("conv2d", {
            "in_channels": w.shape[1], "out_channels": w.shape[0],
            "kernel_h": w.shape[2], "kernel_w": w.shape[3],
            "stride_h": sh, "stride_w": sw, "pad_h": ph, "pad_w": pw,
        }, weight=w, bias=bias)

    def dense(self, weight, bias=None):
        w = np.asarray(weight, dtype=np.float64)
        if w.ndim != 2:
            raise ModelShapeError(f"dense weight must be rank 2, got shape {list(w.shape)}")
        return self._add("dense", {"in_features": w.shape[1], "out_features": w.shape[0]},
                         weight=w, bias=bias)

    def batch_norm(self, gamma, beta, running_mean, running_var, epsilon=1e-5):
        return self._add("batchNorm2d", {"channels": len(gamma), "epsilon": epsilon},
                         gamma=gamma, beta=beta, running_mean=running_mean, running_var=running_var)

    def relu(self):
        return self._add("relu")

    def leaky_relu(self, alpha=0.2):
        return self._add("leakyRelu", {"alpha": alpha})

    def max_pool(self, window=2, stride=None):
        return self._add("maxPool2d", {"window": window, "stride": stride or window})

    def avg_pool(self, window=2, stride=None):
        return self._add("avgPool2d", {"window": window, "stride": stride or window})

    def flatten(self):
        return self._add("flatten")

    def sigmoid(self):
        return self._add("sigmoid")

    def build(self, metadata: Mapping[str, str] | None = None) -> NetworkModel:
        return NetworkModel(self.input_shape, tuple(self.layers), dict(self.parameters), dict(metadata or {}))


def fold_batch_norm(model: NetworkModel) -> NetworkModel:
    """Absorb every batchNorm2d into the conv2d directly before it."""
    if not any(layer.kind == "batchNorm2d" for layer in model.layers):
        return model
    layers: list[LayerSpec] = []
    params = dict(model.parameters)
    for i, layer in enumerate(model.layers):
        if layer.kind != "batchNorm2d":
            layers.append(layer)
            continue
        if not layers or layers[-1].kind != "conv2d":
            raise StructuralError(f"layer {i}: batchNorm2d must directly follow a conv2d")
        conv = layers[-1]
        bn = model.layer_params(i)
        scale = bn["gamma"] / np.sqrt(bn["running_var"] + layer.hyper["epsilon"])
        w = params[conv.params["weight"]].array
        b = params[conv.params["bias"]].array if "bias" in conv.params else np.zeros(w.shape[0])
        w_name = conv.params["weight"]
        b_name = conv.params.get("bias", w_name + ".folded_bias")
        params[w_name] = Tensor(w * scale[:, None, None, None])
        params[b_name] = Tensor((b - bn["running_mean"]) * scale + bn["beta"])
        for name in layer.params.values():
            params.pop(name, None)
        layers[-1] = LayerSpec("conv2d", conv.hyper, {"weight": w_name, "bias": b_name})
    used = {n for layer in layers for n in layer.params.values()}
    params = {k: v for k, v in params.items() if k in used}
    return NetworkModel(model.input_shape, tuple(layers), params, model.metadata)


def _write_atomic(path: Path, payload: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _pack_tensors(named: Mapping[str, np.ndarray]) -> tuple[list[dict], bytes]:
    entries, chunks, offset = [], [], 0
    for name, value in named.items():
        arr = np.asarray(value, dtype=np.float64)
        with np.errstate(over="ignore"):
            f32 = arr.astype("<f4")
        if not np.all(np.isfinite(f32)):
            raise ModelFormatError(f"tensor {name!r} is not representable as finite float32")
        raw = f32.tobytes(order="C")
        entries.append({"name": name, "dtype": "f32", "shape": list(arr.shape),
                        "offset": offset, "length": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    return entries, b"".join(chunks)


def _unpack_tensors(entries: Any, blob: bytes) -> dict[str, np.ndarray]:
    if not isinstance(entries, list):
        raise ManifestParseError("'tensors' must be an array")
    out = {}
    for entry in entries:
        if not isinstance(entry, dict):
            raise ManifestParseError("tensor entries must be objects")
        try:
            name, dtype, shape = entry["name"], entry["dtype"], entry["shape"]
            offset, length = entry["offset"], entry["length"]
        except KeyError as exc:
            raise ManifestParseError(f"tensor entry missing field {exc}") from None
        if dtype != "f32":
            raise DtypeError(f"tensor {name!r} has dtype {dtype!r}; only 'f32' is supported")
        if not (isinstance(shape, list) and all(isinstance(s, int) and s >= 0 for s in shape)):
            raise ManifestParseError(f"tensor {name!r} has malformed shape {shape!r}")
        if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in (offset, length)):
            raise ManifestParseError(f"tensor {name!r} has malformed offset/length")
        if offset + length > len(blob):
            raise BoundsError(f"tensor {name!r} spans bytes [{offset}, {offset + length}) "
                              f"but the weights file has {len(blob)} bytes")
        count = math.prod(shape)
        if length != 4 * count:
            raise ModelShapeError(f"tensor {name!r} declares shape {shape} ({count} values) "
                                  f"but length {length} bytes")
        if name in out:
            raise ManifestParseError(f"duplicate tensor name {name!r}")
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise ModelFormatError(f"tensor {name!r} contains NaN or infinity")
        out[name] = values.reshape(shape)
    return out


def _read_manifest(manifest_path) -> dict:
    try:
        text = Path(manifest_path).read_text(encoding="utf-8")
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestParseError(f"{manifest_path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ManifestParseError(f"{manifest_path}: manifest must be a JSON object")
    if doc.get("version") != FORMAT_VERSION:
        raise ManifestParseError(f"{manifest_path}: unsupported version {doc.get('version')!r}")
    return doc


def manifest_from_model(model: NetworkModel) -> tuple[dict, bytes]:
    entries, blob = _pack_tensors({k: v.array for k, v in model.parameters.items()})
    layers = [{"kind": layer.kind, **layer.hyper, "params": dict(layer.params)} for layer in model.layers]
    doc = {
        "version": FORMAT_VERSION,
        "input_shape": list(model.input_shape),
        "layers": layers,
        "tensors": entries,
    }
    if model.metadata:
        doc["metadata"] = dict(model.metadata)
    return doc, blob


def model_from_manifest(doc: dict, blob: bytes, fold: bool = True) -> NetworkModel:
    try:
        input_shape = doc["input_shape"]
        raw_layers = doc["layers"]
    except KeyError as exc:
        raise ManifestParseError(f"manifest missing field {exc}") from None
    if not (isinstance(input_shape, list) and all(isinstance(s, int) for s in input_shape)):
        raise ManifestParseError("'input_shape' must be an integer array")
    if not isinstance(raw_layers, list):
        raise ManifestParseError("'layers' must be an array")
    tensors = _unpack_tensors(doc.get("tensors", []), blob)
    layers = []
    for i, raw in enumerate(raw_layers):
        if not isinstance(raw, dict) or "kind" not in raw:
            raise ManifestParseError(f"layer {i} must be an object with a 'kind'")
        hyper = {k: v for k, v in raw.items() if k not in ("kind", "params")}
        params = raw.get("params", {})
        if not isinstance(params, dict):
            raise ManifestParseError(f"layer {i} 'params' must be an object")
        layers.append(LayerSpec(raw["kind"], hyper, params))
    metadata = doc.get("metadata", {})
    if not isinstance(metadata, dict):
        raise ManifestParseError("'metadata' must be an object")
    model = NetworkModel(tuple(input_shape), tuple(layers), tensors, metadata)
    return fold_batch_norm(model) if fold else model


def load_model(manifest_path, weights_path, fold: bool = True) -> NetworkModel:
    """Read and validate a model; batch-norm layers are folded unless ``fold=False``."""
    doc = _read_manifest(manifest_path)
    blob = Path(weights_path).read_bytes()
    return model_from_manifest(doc, blob, fold=fold)


def save_model(model: NetworkModel, manifest_path, weights_path) -> None:
    """Write ``model`` as manifest + blob.  Values are quantized to float32."""
    if not isinstance(model, NetworkModel):
        raise TypeError("save_model expects a NetworkModel")
    model._validate()
    doc, blob = manifest_from_model(model)
    _write_atomic(Path(weights_path), blob)
    _write_atomic(Path(manifest_path), json.dumps(doc, indent=2).encode("utf-8"))


def save_tensors(named: Mapping[str, Any], manifest_path, weights_path,
                 metadata: Mapping[str, Any] | None = None) -> None:
    """Store loose tensors (e.g. relevance maps) in the model container format.

    The manifest carries an empty ``layers`` array; it is not a loadable model.
    """
    entries, blob = _pack_tensors({k: np.asarray(v) for k, v in named.items()})
    doc = {"version": FORMAT_VERSION, "input_shape": [], "layers": [], "tensors": entries}
    if metadata:
        doc["metadata"] = dict(metadata)
    _write_atomic(Path(weights_path), blob)
    _write_atomic(Path(manifest_path), json.dumps(doc, indent=2).encode("utf-8"))


def load_tensors(manifest_path, weights_path) -> tuple[dict[str, np.ndarray], dict]:
    doc = _read_manifest(manifest_path)
    blob = Path(weights_path).read_bytes()
    return _unpack_tensors(doc.get("tensors", []), blob), doc.get("metadata", {})
