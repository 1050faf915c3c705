"""Latency code: values in [0, 1] <-> integer spike times.

Encoding uses ``s = floor(T_max * (1 - p))`` and decoding inverts the
readout ramp, ``value = 2 - t_local / T_max`` for a spike ``t_local``
steps into a layer's window.  Together they induce the grid
``ceil(T_max * p) / T_max`` for inputs and ``floor(T_max * a) / T_max``
for computed activations.

All products ``T_max * x`` are evaluated exactly (error-free product), so
the floor/ceil results are those of real arithmetic on the float value and
never flip at grid boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SPLITTER = 134217729.0  # 2**27 + 1
_MAX_TMAX = 2 ** 26


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class SpikeEvent:
    neuron_id: int
    time: int

    def __post_init__(self):
        if self.time < 0:
            raise CodecError(f"negative spike time {self.time}")


@dataclass(frozen=True)
class CodecConfig:
    t_max: int

    def __post_init__(self):
        check_tmax(self.t_max)


def check_tmax(t_max):
    if int(t_max) != t_max or not 1 <= t_max <= _MAX_TMAX:
        raise CodecError(f"T_max must be an integer in [1, {_MAX_TMAX}], got {t_max}")
    return int(t_max)


def _scaled_parts(x, t_max):
    """Exact ``t_max * x`` as an unevaluated sum ``hi + lo``."""
    x = np.asarray(x, dtype=np.float64)
    t = float(t_max)
    c = _SPLITTER * x
    x_hi = c - (c - x)
    x_lo = x - x_hi
    hi = t * x
    lo = (t * x_hi - hi) + t * x_lo
    return hi, lo


def ceil_scaled(x, t_max):
    """``ceil(t_max * x)`` in exact arithmetic, as int64."""
    hi, lo = _scaled_parts(x, t_max)
    out = np.ceil(hi)
    out = np.where((out == hi) & (lo > 0), out + 1, out)
    return out.astype(np.int64)


def floor_scaled(x, t_max):
    """``floor(t_max * x)`` in exact arithmetic, as int64."""
    hi, lo = _scaled_parts(x, t_max)
    out = np.floor(hi)
    out = np.where((out == hi) & (lo < 0), out - 1, out)
    return out.astype(np.int64)


def encode(values, t_max):
    """Vectorised encoder: spike times ``floor(T_max (1 - p))``."""
    t_max = check_tmax(t_max)
    p = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise CodecError("cannot encode non-finite values")
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise CodecError(
            f"values must lie in [0, 1], got range [{p.min():g}, {p.max():g}]")
    # floor(T - T p) == T - ceil(T p) for integer T
    return t_max - ceil_scaled(p, t_max)


def encode_value(p, t_max) -> int:
    return int(encode(np.float64(p), t_max))


def encode_events(values, t_max):
    """Encode a flat vector as a list of :class:`SpikeEvent`."""
    times = encode(np.ravel(values), t_max)
    return [SpikeEvent(i, int(t)) for i, t in enumerate(times)]


def events_to_times(events, n_inputs):
    """Dense spike-time vector (-1 = silent) from a list of events."""
    times = np.full(n_inputs, -1, dtype=np.int64)
    for ev in events:
        if not 0 <= ev.neuron_id < n_inputs:
            raise CodecError(f"neuron id {ev.neuron_id} outside 0..{n_inputs - 1}")
        if times[ev.neuron_id] >= 0:
            raise CodecError(f"neuron {ev.neuron_id} spikes more than once")
        times[ev.neuron_id] = ev.time
    return times


def decode(t_local, t_max, ext=None):
    """Vectorised decoder for spikes inside the readout window.

    Valid local times run from ``T_max`` (value 1) through ``2 T_max``
    (value 0) to ``2 T_max + ext`` (value ``-ext / T_max``).
    """
    t_max = check_tmax(t_max)
    ext = t_max if ext is None else int(ext)
    t = np.asarray(t_local)
    if np.any(t != np.floor(t)):
        raise CodecError("spike times must be integers")
    t = t.astype(np.int64)
    if t.size and t.min() < t_max:
        raise CodecError(
            f"spike at local time {t.min()} precedes the readout window "
            f"[{t_max}, {2 * t_max + ext}]: early spikes must be handled upstream")
    if t.size and t.max() > 2 * t_max + ext:
        raise CodecError(
            f"spike at local time {t.max()} is past the readout window end {2 * t_max + ext}")
    return (2 * t_max - t) / t_max


def decode_spike_time(t_local, t_max, ext=None) -> float:
    return float(decode(np.int64(t_local), t_max, ext))


def quantize_input(p, t_max):
    """The grid value an encoded input stands for: ``ceil(T p) / T``."""
    encode(p, t_max)  # range checks
    return ceil_scaled(p, t_max) / check_tmax(t_max)


def quantize_value(a, t_max, rectify=True, ext=None):
    """The value a spiking unit with exact activation ``a`` reports.

    ``a`` above 1 would fire during the encoding phase and is rejected.
    Without rectification results are limited to ``-ext / T_max``; lower
    activations never spike and come back as NaN.
    """
    t_max = check_tmax(t_max)
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise CodecError("activation must be finite")
    if a.size and a.max() > 1.0:
        raise CodecError(
            f"activation {a.max():g} > 1 fires early; the layer is not normalized")
    steps = floor_scaled(a, t_max)
    if rectify:
        return np.maximum(steps, 0) / t_max
    ext = t_max if ext is None else int(ext)
    return np.where(steps < -ext, np.nan, steps / t_max)
