"""Activation normalization and diagnostics.

``normalize_activations`` rescales each parameter layer so a chosen
percentile of its (rectified) activation becomes 1 while dividing biases by
the product of all scales so far, which keeps every layer a pure rescaling
of the original.  ``legacy_weight_norm`` is the older data-based weight
normalization that rescales weights by ``lambda_{l-1} / lambda_l`` and
biases by ``1 / lambda_l`` only, for comparison.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .model import AnnModel, ModelError, forward

DEFAULT_PERCENTILE = 98.5
DEFAULT_SAMPLES = 1024


class NormalizationError(ValueError):
    pass


def percentile(values, p):
    """Linear-interpolation percentile (rank ``p/100 * (n - 1)``)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise NormalizationError("percentile of an empty set")
    if not 0.0 < p <= 100.0:
        raise NormalizationError(f"percentile must lie in (0, 100], got {p}")
    return float(np.percentile(v, p, method="linear"))


def _check_raw(model):
    if model.is_normalized:
        raise NormalizationError(f"model {model.name!r} is already normalized")


def _calibration(calibration):
    x = np.asarray(calibration, dtype=np.float64)
    if x.size == 0 or len(x) == 0:
        raise NormalizationError("calibration batch is empty")
    return x


def _layer_output(layers, idx, x):
    out = x
    for layer in layers[:idx + 1]:
        out = layer.apply(out)
    return out


def normalize_activations(model, calibration, p=DEFAULT_PERCENTILE, strict=False):
    """Percentile-based layer-wise normalization with bias correction.

    Returns ``(normalized_model, scales)``.  For every parameter layer in
    order the raw layer is evaluated after the already-normalized prefix,
    ``s`` is the ``p``-th percentile of its output, the weights are divided
    by ``s`` and the bias by the product of all scales so far.  With
    ``strict`` the bias is pre-divided by the product of the earlier scales
    before measuring, so the final layer's percentile is exactly 1.
    """
    _check_raw(model)
    x = _calibration(calibration)
    layers = list(model.layers)
    scales = []
    prod = 1.0
    for idx in model.param_indices:
        raw = layers[idx]
        probe = raw.with_params(raw.weight, raw.bias / prod) if strict else raw
        trial = layers[:idx] + [probe]
        s = percentile(_layer_output(trial, idx, x), p)
        if not s > 0.0 or not math.isfinite(s):
            raise NormalizationError(
                f"layer {idx}: {p}th percentile activation is {s:g}; cannot normalize")
        scales.append(s)
        prod *= s
        layers[idx] = raw.with_params(raw.weight / s, raw.bias / prod)
    meta = {"percentile": float(p), "scales": [float(s) for s in scales],
            "method": "strict" if strict else "activation"}
    return model.replace_layers(layers, normalization=meta), scales


def legacy_weight_norm(model, calibration, p=DEFAULT_PERCENTILE):
    """Data-based weight normalization without bias correction.

    Layers are processed in order on the partially normalized network, so the
    measured percentile ``s_l`` already equals ``lambda_l / lambda_{l-1}`` and
    ``W <- W / s_l`` is the usual ``W lambda_{l-1} / lambda_l`` update.  The
    bias is divided by the same ``s_l`` instead of the cumulative
    ``lambda_l``, which is exact only for zero-bias networks.
    """
    _check_raw(model)
    x = _calibration(calibration)
    layers = list(model.layers)
    scales = []
    for idx in model.param_indices:
        raw = layers[idx]
        s = percentile(_layer_output(layers, idx, x), p)
        if not s > 0.0 or not math.isfinite(s):
            raise NormalizationError(
                f"layer {idx}: {p}th percentile activation is {s:g}; cannot normalize")
        scales.append(s)
        layers[idx] = raw.with_params(raw.weight / s, raw.bias / s)
    meta = {"percentile": float(p), "scales": [float(v) for v in scales],
            "method": "legacy"}
    return model.replace_layers(layers, normalization=meta)


@dataclass
class NormalizationReport:
    layers: list
    scales: list
    cumulative: list
    residuals: list
    percentiles: list
    pairs: list = field(default_factory=list, repr=False)  # (original, rescaled) arrays

    @property
    def max_residual(self):
        return max(self.residuals) if self.residuals else 0.0

    def to_json(self):
        return {
            "layers": self.layers,
            "scales": self.scales,
            "cumulative_scales": self.cumulative,
            "residuals": self.residuals,
            "percentile_values": self.percentiles,
            "pairs_per_layer": [len(a) for a, _ in self.pairs],
        }

    def scatter_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "original", "normalized_rescaled"])
        for layer, (orig, resc) in zip(self.layers, self.pairs):
            for a, b in zip(orig.tolist(), resc.tolist()):
                w.writerow([layer, repr(a), repr(b)])
        return buf.getvalue()


def normalization_report(original, normalized, probe, scales=None, p=DEFAULT_PERCENTILE):
    """Compare activations layer by layer after undoing the cumulative scale.

    The residual of a layer is ``max |a_orig - a_norm * prod(scales[:l+1])|``;
    it vanishes when normalization is an exact per-layer rescaling.
    """
    if len(original.layers) != len(normalized.layers) or original.shapes != normalized.shapes:
        raise ModelError("models are not structurally identical")
    if scales is None:
        scales = (normalized.normalization or {}).get("scales") or [1.0] * len(
            original.param_indices)
    x = _calibration(probe)
    _, acts_o = forward(original, x, record_activations=True)
    _, acts_n = forward(normalized, x, record_activations=True)
    recorded = [i for i, l in enumerate(original.layers) if l.kind != "Flatten"]
    layers, cum_list, residuals, pcts, pairs = [], [], [], [], []
    cum, k = 1.0, 0
    for pos, idx in enumerate(recorded):
        if original.layers[idx].has_params:
            cum *= scales[k]
            k += 1
        a = acts_o[pos].ravel()
        b = acts_n[pos].ravel() * cum
        layers.append(idx)
        cum_list.append(cum)
        residuals.append(float(np.max(np.abs(a - b))) if a.size else 0.0)
        pcts.append(percentile(acts_n[pos], p))
        pairs.append((a, b))
    return NormalizationReport(layers, [float(s) for s in scales], cum_list,
                               residuals, pcts, pairs)


@dataclass
class SweepRow:
    percentile: float
    accuracy: float
    error_pct: float
    early_spike_fraction: float
    ann_accuracy: float
    scales: list


def percentile_sweep(model, calibration, test_x, test_y, percentiles, t_max,
                     strict=False, batch_size=250, **convert_options):
    """Normalize at each percentile, convert, simulate the test set."""
    import warnings

    from .snn import convert, run_dataset

    rows = []
    for p in percentiles:
        norm, scales = normalize_activations(model, calibration, p, strict=strict)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            net = convert(norm, t_max, **convert_options)
        agg = run_dataset(net, test_x, test_y, batch_size=batch_size, with_ann=True)
        rows.append(SweepRow(float(p), agg.accuracy, 100.0 * (1.0 - agg.accuracy),
                             agg.early_spike_fraction, agg.ann_accuracy, scales))
    return rows
