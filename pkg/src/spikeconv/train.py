"""Small deterministic SGD trainer for desk-scale MNIST models."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .model import CONV2D, DENSE, FLATTEN, MAXPOOL2D, AnnModel, Layer, predict

log = logging.getLogger(__name__)

INPUT_SHAPE = (1, 28, 28)
_F32_MAX = float(np.finfo(np.float32).max)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """``arch`` is ``"mlp:784-128-10"`` style or ``"lenet"``."""
    arch: str = "mlp:784-128-10"
    epochs: int = 10
    lr: float = 0.1
    batch_size: int = 64
    seed: int = 42
    shift: int = 0          # random translation augmentation, pixels
    cosine: bool = False    # cosine learning-rate decay

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0 or self.batch_size < 1 or self.shift < 0:
            raise ValueError(f"invalid training configuration {self}")

    def to_json(self):
        return asdict(self)


def build_layers(arch, rng):
    """He-initialised layers for an architecture string."""
    def dense(n_out, n_in, rectify=True):
        w = rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_out, n_in))
        return Layer.dense(w, np.zeros(n_out), rectify=rectify)

    def conv(c_out, c_in, k):
        w = rng.normal(0.0, math.sqrt(2.0 / (c_in * k * k)), size=(c_out, c_in, k, k))
        return Layer.conv2d(w, np.zeros(c_out))

    if arch == "lenet":
        return [conv(8, 1, 5), Layer.maxpool2d(2), conv(16, 8, 5), Layer.maxpool2d(2),
                Layer.flatten(), dense(64, 256), dense(10, 64, rectify=False)]
    if arch.startswith("mlp:"):
        try:
            sizes = [int(v) for v in arch[4:].split("-")]
        except ValueError:
            raise ValueError(f"bad architecture {arch!r}") from None
        if len(sizes) < 2 or sizes[0] != int(np.prod(INPUT_SHAPE)) or min(sizes) < 1:
            raise ValueError(f"bad architecture {arch!r}")
        layers = [Layer.flatten()]
        for i in range(len(sizes) - 1):
            layers.append(dense(sizes[i + 1], sizes[i], rectify=i < len(sizes) - 2))
        return layers
    raise ValueError(f"unknown architecture {arch!r}")


def _forward(params, layers, x):
    caches = []
    out = x
    for (w, b), layer in zip(params, layers):
        caches.append(out)
        if layer.kind == FLATTEN:
            out = out.reshape(len(out), -1)
        elif layer.kind == MAXPOOL2D:
            out = ops.maxpool2d(out, layer.pool, layer.stride)
        elif layer.kind == DENSE:
            out = out @ w.T + b
        else:
            out = ops.conv2d(out, w, layer.stride, layer.padding) + b[None, :, None, None]
        if layer.has_params and layer.rectify:
            out = np.maximum(out, 0.0)
        caches[-1] = (caches[-1], out)
    return out, caches


def _backward(params, layers, caches, grad):
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        x, y = caches[i]
        w, _ = params[i]
        if layer.has_params and layer.rectify:
            grad = grad * (y > 0)
        if layer.kind == FLATTEN:
            grad = grad.reshape(x.shape)
        elif layer.kind == MAXPOOL2D:
            grad = ops.maxpool2d_grad(x, grad, layer.pool, layer.stride)
        elif layer.kind == DENSE:
            grads[i] = (grad.T @ x, grad.sum(axis=0))
            grad = grad @ w
        elif layer.kind == CONV2D:
            gw = ops.conv2d_grad_weight(x, grad, w.shape[2:], layer.stride, layer.padding)
            grads[i] = (gw, grad.sum(axis=(0, 2, 3)))
            if i:
                grad = ops.conv2d_grad_input(grad, w, x.shape[2:], layer.stride, layer.padding)
    return grads


def _shift_batch(x, max_shift, rng):
    if not max_shift:
        return x
    out = np.zeros_like(x)
    dy, dx = rng.integers(-max_shift, max_shift + 1, size=(2, len(x)))
    h, w = x.shape[-2:]
    for i in range(len(x)):
        sy, sx = dy[i], dx[i]
        out[i, :, max(sy, 0):h + min(sy, 0), max(sx, 0):w + min(sx, 0)] = \
            x[i, :, max(-sy, 0):h + min(-sy, 0), max(-sx, 0):w + min(-sx, 0)]
    return out


def train_model(config, train_data, test_data=None, name=None) -> AnnModel:
    """Mini-batch SGD with softmax cross-entropy.

    ``train_data``/``test_data`` are ``(images, labels)`` with images in
    [0, 1] of shape (N, 28, 28) or (N, 1, 28, 28).  Weights are rounded to
    float32 at the end so the model file stores them exactly.
    """
    x, y = train_data
    x = np.asarray(x, dtype=np.float64).reshape((-1,) + INPUT_SHAPE)
    y = np.asarray(y, dtype=np.int64)
    if len(x) != len(y) or len(x) == 0:
        raise TrainingError("training images and labels differ in length or are empty")
    rng = np.random.default_rng(config.seed)
    layers = build_layers(config.arch, rng)
    params = [(np.array(l.weight), np.array(l.bias)) if l.has_params else (None, None)
              for l in layers]
    n = len(x)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total = config.epochs * steps_per_epoch
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            xb = _shift_batch(x[idx], config.shift, rng)
            lr = config.lr
            if config.cosine:
                lr *= 0.5 * (1.0 + math.cos(math.pi * step / total))
            logits, caches = _forward(params, layers, xb)
            logits = logits - logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            loss = -np.log(p[np.arange(len(idx)), y[idx]] + 1e-300).mean()
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}: config {config.to_json()}")
            loss_sum += loss * len(idx)
            p[np.arange(len(idx)), y[idx]] -= 1.0
            grads = _backward(params, layers, caches, p / len(idx))
            for i, g in enumerate(grads):
                if g is not None:
                    w, b = params[i]
                    w -= lr * g[0]
                    b -= lr * g[1]
            step += 1
        if not all(np.all(np.abs(a) < _F32_MAX) for w_b in params if w_b[0] is not None
                   for a in w_b):
            raise TrainingError(f"weights diverged at epoch {epoch}: config {config.to_json()}")
        log.info("epoch %d loss %.4f", epoch + 1, loss_sum / n)
    final = []
    for layer, (w, b) in zip(layers, params):
        if layer.has_params:
            layer = layer.with_params(w.astype(np.float32).astype(np.float64),
                                      b.astype(np.float32).astype(np.float64))
        final.append(layer)
    model = AnnModel(INPUT_SHAPE, tuple(final), name or config.arch.replace(":", "-"))
    if test_data is not None:
        log.info("test accuracy %.4f", evaluate(model, *test_data))
    return model


def evaluate(model, images, labels) -> float:
    """Argmax accuracy of the floating-point model."""
    labels = np.asarray(labels, dtype=np.int64)
    x = np.asarray(images, dtype=np.float64)
    x = x.reshape((len(x),) + tuple(model.input_shape))
    if len(x) != len(labels):
        raise ValueError("images and labels differ in length")
    if len(x) == 0:
        return 0.0
    return float(np.mean(predict(model, x) == labels))
