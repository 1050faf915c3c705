"""Shared builders for tests: random networks and the toy network."""
import numpy as np

from spikeconv.model import AnnModel, Layer
from spikeconv.normalize import NormalizationError, normalize_activations


def toy_model():
    """Two inputs, two outputs, w = (1, -1) / (-1, 1), no bias."""
    return AnnModel((2,), (Layer.dense([[1.0, -1.0], [-1.0, 1.0]], [0.0, 0.0]),),
                    name="toy", normalization={"percentile": 100.0, "scales": [1.0]})


def random_dense(rng, n_in, n_out, rectify=True, bias_scale=0.2):
    w = rng.normal(size=(n_out, n_in)) / np.sqrt(n_in)
    return Layer.dense(w, rng.normal(size=n_out) * bias_scale, rectify=rectify)


def random_model(rng, max_width=32):
    """1-4 parameter layers mixing dense, conv and max-pool stages."""
    n_param = int(rng.integers(1, 5))
    if rng.random() < 0.4:
        n_in = int(rng.integers(1, max_width + 1))
        layers, width = [], n_in
        for k in range(n_param):
            out = int(rng.integers(1, max_width + 1))
            layers.append(random_dense(rng, width, out, rectify=k < n_param - 1))
            width = out
        return AnnModel((n_in,), layers)
    c, h = int(rng.integers(1, 4)), int(rng.integers(4, 11))
    shape, layers = (c, h, h), []
    for k in range(n_param - 1):
        if shape[1] < 2:
            break
        out_c = int(rng.integers(1, 6))
        kern = int(rng.integers(1, min(3, shape[1]) + 1))
        pad = int(rng.integers(0, 2)) if kern > 1 else 0
        w = rng.normal(size=(out_c, shape[0], kern, kern)) / np.sqrt(shape[0] * kern * kern)
        layers.append(Layer.conv2d(w, rng.normal(size=out_c) * 0.2, padding=pad))
        shape = layers[-1].output_shape(shape)
        if shape[1] >= 2 and shape[1] % 2 == 0 and rng.random() < 0.5:
            layers.append(Layer.maxpool2d(2))
            shape = layers[-1].output_shape(shape)
    layers.append(Layer.flatten())
    n_flat = int(np.prod(shape))
    layers.append(random_dense(rng, n_flat, int(rng.integers(1, 11)), rectify=False))
    return AnnModel((c, h, h), layers)


def normalized_random(rng, n_inputs=4, max_width=32):
    """A random model normalized on its own inputs so activations stay <= 1."""
    while True:
        model = random_model(rng, max_width)
        x = rng.random((n_inputs,) + model.input_shape)
        try:
            norm, _ = normalize_activations(model, x, 100.0, strict=True)
        except NormalizationError:
            continue  # a dead layer; draw another network
        return norm, x
