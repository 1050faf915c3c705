"""Feed-forward ANN description, reference forward pass and model directory I/O.

A model directory holds ``model.json`` plus one raw little-endian float32
blob per weight/bias tensor.  In memory every tensor is float64; float32
blobs widen exactly, so load/save round-trips are bit-exact for any model
whose values are float32-representable (trained and loaded models are).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ops

DENSE = "Dense"
CONV2D = "Conv2d"
MAXPOOL2D = "MaxPool2d"
FLATTEN = "Flatten"
KINDS = (DENSE, CONV2D, MAXPOOL2D, FLATTEN)
PARAM_KINDS = (DENSE, CONV2D)

FORMAT_TAG = "spikeconv-model"
FORMAT_VERSION = 1


class ModelError(ValueError):
    """Invalid model structure, parameters or model files."""


def _frozen(a, name):
    if a is None:
        return None
    arr = np.array(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def _same_bits(a, b):
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and a.tobytes() == b.tobytes()


@dataclass(frozen=True, eq=False)
class Layer:
    kind: str
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    pool: int = 0
    rectify: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "weight", _frozen(self.weight, f"{self.kind} weight"))
        object.__setattr__(self, "bias", _frozen(self.bias, f"{self.kind} bias"))
        if self.kind in PARAM_KINDS:
            if self.weight is None or self.bias is None:
                raise ModelError(f"{self.kind} needs weight and bias")
            ndim = 2 if self.kind == DENSE else 4
            if self.weight.ndim != ndim:
                raise ModelError(
                    f"{self.kind} weight must be {ndim}-D, got shape {self.weight.shape}")
            if self.bias.shape != (self.weight.shape[0],):
                raise ModelError(
                    f"{self.kind} bias shape {self.bias.shape} does not match "
                    f"{self.weight.shape[0]} outputs")
        elif self.weight is not None or self.bias is not None:
            raise ModelError(f"{self.kind} carries no parameters")
        if self.kind == MAXPOOL2D and self.pool < 1:
            raise ModelError("MaxPool2d needs a positive kernel size")
        if self.stride < 1 or self.padding < 0:
            raise ModelError("stride must be >= 1 and padding >= 0")

    @classmethod
    def dense(cls, weight, bias, rectify=True):
        return cls(DENSE, weight, bias, rectify=rectify)

    @classmethod
    def conv2d(cls, weight, bias, stride=1, padding=0, rectify=True):
        return cls(CONV2D, weight, bias, stride=stride, padding=padding, rectify=rectify)

    @classmethod
    def maxpool2d(cls, kernel, stride=None):
        return cls(MAXPOOL2D, pool=kernel, stride=stride or kernel)

    @classmethod
    def flatten(cls):
        return cls(FLATTEN)

    @property
    def has_params(self):
        return self.kind in PARAM_KINDS

    def output_shape(self, in_shape):
        in_shape = tuple(in_shape)
        if self.kind == DENSE:
            if in_shape != (self.weight.shape[1],):
                raise ModelError(
                    f"Dense expects input ({self.weight.shape[1]},), got {in_shape}")
            return (self.weight.shape[0],)
        if self.kind == FLATTEN:
            return (int(np.prod(in_shape)),)
        if len(in_shape) != 3:
            raise ModelError(f"{self.kind} expects a (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        try:
            if self.kind == CONV2D:
                o, ci, kh, kw = self.weight.shape
                if ci != c:
                    raise ModelError(f"Conv2d expects {ci} input channels, got {c}")
                return (o, ops.conv_out_size(h, kh, self.stride, self.padding),
                        ops.conv_out_size(w, kw, self.stride, self.padding))
            return (c, ops.conv_out_size(h, self.pool, self.stride, 0),
                    ops.conv_out_size(w, self.pool, self.stride, 0))
        except ValueError as exc:
            if isinstance(exc, ModelError):
                raise
            raise ModelError(str(exc)) from None

    def linear(self, x):
        """Affine part without bias, batched: x has a leading batch axis."""
        if self.kind == DENSE:
            return x @ self.weight.T
        return ops.conv2d(x, self.weight, self.stride, self.padding)

    def bias_map(self, out_shape):
        """Bias broadcast to one value per output unit."""
        if self.kind == DENSE:
            return self.bias.copy()
        return np.broadcast_to(self.bias[:, None, None], out_shape).copy()

    def apply(self, x):
        if self.kind == FLATTEN:
            return x.reshape(len(x), -1)
        if self.kind == MAXPOOL2D:
            return ops.maxpool2d(x, self.pool, self.stride)
        out = self.linear(x)
        out += self.bias if self.kind == DENSE else self.bias[None, :, None, None]
        if self.rectify:
            np.maximum(out, 0.0, out=out)
        return out

    def with_params(self, weight, bias):
        return replace(self, weight=weight, bias=bias)

    def __eq__(self, other):
        if not isinstance(other, Layer):
            return NotImplemented
        return (self.kind == other.kind and self.stride == other.stride
                and self.padding == other.padding and self.pool == other.pool
                and self.rectify == other.rectify
                and _same_bits(self.weight, other.weight)
                and _same_bits(self.bias, other.bias))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class AnnModel:
    input_shape: tuple
    layers: tuple
    name: str = "model"
    normalization: dict | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if any(s < 1 for s in self.input_shape):
            raise ModelError(f"bad input shape {self.input_shape}")
        if not any(l.has_params for l in self.layers):
            raise ModelError("a model needs at least one parameter layer")
        self.shapes  # validates the chain

    @property
    def shapes(self):
        """Output shape of every layer, in order."""
        out, shape = [], self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ModelError as exc:
                raise ModelError(f"layer {i} ({layer.kind}): {exc}") from None
            out.append(shape)
        return out

    @property
    def output_shape(self):
        return self.shapes[-1]

    @property
    def param_indices(self):
        return [i for i, l in enumerate(self.layers) if l.has_params]

    @property
    def is_normalized(self):
        return self.normalization is not None

    def replace_layers(self, layers, normalization=None, name=None):
        return AnnModel(self.input_shape, tuple(layers), name or self.name, normalization)

    def __eq__(self, other):
        if not isinstance(other, AnnModel):
            return NotImplemented
        return (self.input_shape == other.input_shape and self.name == other.name
                and self.normalization == other.normalization
                and len(self.layers) == len(other.layers)
                and all(a == b for a, b in zip(self.layers, other.layers)))

    __hash__ = None


def _as_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == model.input_shape:
        return x[None], True
    if x.shape[1:] == model.input_shape:
        return x, False
    raise ModelError(f"input shape {x.shape} does not match model input {model.input_shape}")


def forward(model, x, record_activations=False):
    """Floating-point reference pass.

    ``x`` is one sample of ``model.input_shape`` or a batch with a leading
    axis. With ``record_activations`` the post-rectification output of every
    parameter and pooling layer is returned as well, in layer order.
    """
    batch, single = _as_batch(model, x)
    acts = []
    out = batch
    for layer in model.layers:
        out = layer.apply(out)
        if record_activations and layer.kind != FLATTEN:
            acts.append(out[0] if single else out)
    out = out[0] if single else out
    return (out, acts) if record_activations else out


def predict(model, x, batch_size=1000):
    x = np.asarray(x, dtype=np.float64)
    preds = [forward(model, x[i:i + batch_size]).reshape(len(x[i:i + batch_size]), -1)
             .argmax(axis=1) for i in range(0, len(x), batch_size)]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def count_ann_macs(model) -> int:
    total = 0
    for layer, out_shape in zip(model.layers, model.shapes):
        if layer.kind == DENSE:
            total += layer.weight.size
        elif layer.kind == CONV2D:
            _, ci, kh, kw = layer.weight.shape
            total += int(np.prod(out_shape)) * ci * kh * kw
    return int(total)


# -- model directory I/O -------------------------------------------------------

def _read_blob(path, shape):
    if not path.exists():
        raise ModelError(f"missing blob {path}")
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise ModelError(
            f"{path.name}: expected {expected // 4} float32 values for shape "
            f"{list(shape)}, found {len(raw) / 4:g}")
    data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
    if not np.all(np.isfinite(data)):
        raise ModelError(f"{path.name}: non-finite values")
    return data


def load_model(path) -> AnnModel:
    path = Path(path)
    manifest_path = path / "model.json"
    if not manifest_path.exists():
        raise ModelError(f"{path}: no model.json")
    try:
        meta = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelError(f"{manifest_path}: {exc}") from None
    layers = []
    for i, entry in enumerate(meta["layers"]):
        kind = entry.get("kind")
        if kind == DENSE:
            shape = (entry["out_features"], entry["in_features"])
        elif kind == CONV2D:
            kh, kw = entry["kernel_size"]
            shape = (entry["out_channels"], entry["in_channels"], kh, kw)
        elif kind == MAXPOOL2D:
            layers.append(Layer.maxpool2d(entry["kernel_size"], entry.get("stride")))
            continue
        elif kind == FLATTEN:
            layers.append(Layer.flatten())
            continue
        else:
            raise ModelError(f"layer {i}: unknown layer kind {kind!r}")
        weight = _read_blob(path / entry["weight_file"], shape)
        bias = _read_blob(path / entry["bias_file"], (shape[0],))
        layers.append(Layer(kind, weight, bias, stride=entry.get("stride", 1),
                            padding=entry.get("padding", 0),
                            rectify=bool(entry["rectify"])))
    return AnnModel(tuple(meta["input_shape"]), tuple(layers),
                    meta.get("name", path.name), meta.get("normalization"))


def _blob(arr, narrow):
    f32 = arr.astype("<f4")
    if not narrow and not np.array_equal(f32.astype(np.float64), arr):
        raise ModelError(
            "tensor is not exactly representable as float32; "
            "pass narrow=True to round it")
    return f32.tobytes()


def save_model(model, path, narrow=False) -> None:
    """Write ``model`` as a model directory.

    Values that do not fit float32 exactly raise :class:`ModelError` unless
    ``narrow`` is set, in which case they are rounded to nearest.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, layer in enumerate(model.layers):
        entry = {"kind": layer.kind}
        if layer.kind == DENSE:
            entry.update(in_features=layer.weight.shape[1],
                        out_features=layer.weight.shape[0])
        elif layer.kind == CONV2D:
            o, c, kh, kw = layer.weight.shape
            entry.update(in_channels=c, out_channels=o, kernel_size=[kh, kw],
                        stride=layer.stride, padding=layer.padding)
        elif layer.kind == MAXPOOL2D:
            entry.update(kernel_size=layer.pool, stride=layer.stride)
        if layer.has_params:
            entry.update(rectify=layer.rectify,
                        weight_file=f"layer{i}_weight.bin",
                        bias_file=f"layer{i}_bias.bin")
            (path / entry["weight_file"]).write_bytes(_blob(layer.weight, narrow))
            (path / entry["bias_file"]).write_bytes(_blob(layer.bias, narrow))
        entries.append(entry)
    meta = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "name": model.name,
        "input_shape": list(model.input_shape),
        "layers": entries,
        "normalization": model.normalization,
    }
    (path / "model.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
