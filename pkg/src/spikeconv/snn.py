"""Spiking network construction and clock-driven simulation.

Every parameter layer of a normalized ANN becomes a layer of non-leaky
integrate-and-fire units with threshold ``T_max``.  Layer ``k`` (1-based)
owns the window ``offset_k + (0, 2 T_max]`` where
``offset_k = (k - 1) T_max + k d`` and ``d`` is the per-hop transmission
delay (0 in pure simulation).

Timing conventions, all on one integer clock:

* a spike emitted at step ``t`` reaches the next parameter layer at
  ``t + 1 + d``; max-pool relays forward the earliest input spike in the
  same step;
* the bias acts as a spike emitted at local 0 (arrives at local 1), the
  counter spike is emitted at local ``T_max`` (arrives at ``T_max + 1``)
  with weight ``1 - b - sum(w)``, so the current is exactly 1 afterwards;
* per step: deliver arrivals into the current, integrate the current into
  the membrane (only inside the window, only for units that have not
  fired), fire when ``u >= T_max``, and at local ``2 T_max`` force every
  silent unit of a rectifying layer to fire (rectifier current ``beta``).

With these conventions ``u(T_max) = T_max * a`` for activation ``a`` and a
unit fires at local ``T_max + ceil(T_max (1 - a))``.

Weights and biases are snapped to a dyadic grid (``2**-frac_bits``) chosen
so every current and membrane value in a run is an exactly representable
float64.  Accumulation order then cannot change a spike time, which is
what lets the simulator be compared with the closed-form oracle for exact
equality.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import codec, ops
from .model import CONV2D, DENSE, FLATTEN, MAXPOOL2D, AnnModel, Layer

DENSE_KIND = "dense"
CONV_KIND = "conv"
POOL_KIND = "pool"

_MAX_FRAC_BITS = 40
_MIN_FRAC_BITS = 8


class ConversionError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


class ClassificationError(RuntimeError):
    pass


def _readonly(a):
    if a is None:
        return None
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpikingLayer:
    """One stage of the spiking network.

    ``index`` is the 1-based position among parameter layers; for a pool it
    names the layer whose time frame the pool relays (0 = encoded input).
    """
    kind: str
    in_shape: tuple
    out_shape: tuple
    index: int
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    counter_weight: np.ndarray | None = None
    beta: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    pool: int = 0
    rectify: bool = True

    def __post_init__(self):
        for name in ("weight", "bias", "counter_weight", "beta"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @property
    def is_maxpool(self):
        return self.kind == POOL_KIND

    @property
    def n_units(self):
        return int(np.prod(self.out_shape))

    def linear(self, x):
        """Synaptic input for a batch of presynaptic values/indicators."""
        x = x.reshape((len(x),) + tuple(self.in_shape))
        if self.kind == DENSE_KIND:
            return x @ self.weight.T
        return ops.conv2d(x, self.weight, self.stride, self.padding)

    def abs_linear_ones(self):
        ones = np.ones((1,) + tuple(self.in_shape))
        lay = replace(self, weight=np.abs(self.weight))
        return lay.linear(ones)[0]

    def fanin(self):
        """Number of presynaptic units feeding each unit."""
        if self.kind == POOL_KIND:
            return np.full(self.out_shape, self.pool * self.pool, dtype=np.int64)
        ones = np.ones((1,) + tuple(self.in_shape))
        lay = replace(self, weight=np.ones_like(self.weight))
        return np.rint(lay.linear(ones)[0]).astype(np.int64)

    def fanout(self):
        """Number of synapses each presynaptic unit drives in this stage."""
        if self.kind == DENSE_KIND:
            return np.full(self.in_shape, self.weight.shape[0], dtype=np.int64)
        if self.kind == CONV_KIND:
            o, _, kh, kw = self.weight.shape
            return o * ops.window_counts(self.in_shape, (kh, kw), self.stride, self.padding)
        return ops.window_counts(self.in_shape, (self.pool, self.pool), self.stride, 0)


@dataclass(frozen=True, eq=False)
class SpikingNetwork:
    t_max: int
    input_shape: tuple
    layers: tuple
    frac_bits: int
    rectify_last: bool = True
    first_layer_float: bool = False
    ext: int = 0
    delay: int = 0
    float_layer: Layer | None = None
    source: AnnModel | None = field(default=None, repr=False)

    @property
    def threshold(self):
        return self.t_max

    @property
    def spike_input_shape(self):
        return self.layers[0].in_shape

    @property
    def param_layers(self):
        return [i for i, l in enumerate(self.layers) if not l.is_maxpool]

    @property
    def n_spiking_layers(self):
        return len(self.param_layers)

    @property
    def n_neurons(self):
        """Integrating units (the unit count of the operation model)."""
        return sum(self.layers[i].n_units for i in self.param_layers)

    @property
    def n_relays(self):
        return sum(l.n_units for l in self.layers if l.is_maxpool)

    @property
    def n_units(self):
        return self.n_neurons + self.n_relays

    def offset(self, k):
        """Global start of the window of parameter layer ``k`` (1-based)."""
        if k == 0:
            return -self.t_max
        return (k - 1) * self.t_max + k * self.delay

    def frame_offset(self, i):
        """Offset used to decode spikes of stage ``i`` (-1 = encoded input)."""
        if i < 0:
            return -self.t_max
        return self.offset(self.layers[i].index)

    def window_end(self, i):
        """Last local step stage ``i`` is simulated for."""
        lay = self.layers[i]
        return 2 * self.t_max + (0 if lay.rectify else self.ext)

    @property
    def end_step(self):
        last = self.param_layers[-1]
        return self.frame_offset(last) + self.window_end(last)

    @cached_property
    def fanouts(self):
        """Per producer (input first, then every stage): synapses per unit."""
        out = []
        for i in range(-1, len(self.layers)):
            if i + 1 < len(self.layers):
                out.append(self.layers[i + 1].fanout())
            else:
                out.append(np.zeros(self.layers[i].out_shape, dtype=np.int64))
        return out


# -- conversion -----------------------------------------------------------------

def _fixed_point_bits(bound):
    if not math.isfinite(bound):
        raise ConversionError("non-finite weights")
    bits = 50 - math.ceil(math.log2(max(bound, 2.0)))
    bits = min(bits, _MAX_FRAC_BITS)
    if bits < _MIN_FRAC_BITS:
        raise ConversionError(
            f"weights too large for exact simulation (membrane bound {bound:.3g})")
    return bits


def snap(a, frac_bits):
    """Round to the nearest multiple of ``2**-frac_bits`` (exact)."""
    scale = float(2 ** frac_bits)
    return np.round(np.asarray(a, dtype=np.float64) * scale) / scale


def _spiking_layer(kind, layer, in_shape, out_shape, index, rectify, t_max, frac_bits):
    weight = snap(layer.weight, frac_bits)
    bias = snap(layer.bias_map(out_shape), frac_bits)
    lay = SpikingLayer(kind, tuple(in_shape), tuple(out_shape), index,
                       weight=weight, bias=bias, stride=layer.stride,
                       padding=layer.padding, rectify=rectify)
    return _with_aux(lay, t_max)


def _with_aux(lay, t_max):
    """Attach counter weights and rectifier magnitudes for ``lay``'s weights."""
    ones = np.ones((1,) + tuple(lay.in_shape))
    counter = 1.0 - lay.bias - lay.linear(ones)[0]
    beta = t_max + (lay.abs_linear_ones() + np.abs(lay.bias)) * t_max + 1.0
    return replace(lay, counter_weight=counter, beta=beta)


def _membrane_bound(layers, in_shapes, t_max, ext):
    worst = 0.0
    for layer, shape in zip(layers, in_shapes):
        if not layer.has_params:
            continue
        out = layer.apply(np.ones((1,) + tuple(shape)))  # shape probe
        out_shape = out.shape[1:]
        absw = Layer(layer.kind, np.abs(layer.weight), np.zeros_like(layer.bias),
                     stride=layer.stride, padding=layer.padding)
        s = absw.apply(np.ones((1,) + tuple(shape)))[0] + np.abs(layer.bias_map(out_shape))
        worst = max(worst, float(s.max()))
    return (worst + 2.0) * (4 * t_max + 2 * ext + 4)


def convert(model, t_max, rectify_last=True, first_layer_float=False, ext=None,
            delay=0, frac_bits=None):
    """Turn a normalized :class:`AnnModel` into a :class:`SpikingNetwork`."""
    t_max = codec.check_tmax(t_max)
    ext = t_max if ext is None else int(ext)
    if ext < 0 or delay < 0:
        raise ConversionError("ext and delay must be non-negative")
    if not model.is_normalized:
        warnings.warn(f"converting un-normalized model {model.name!r}; "
                      "expect early spikes", stacklevel=2)
    layers = list(model.layers)
    shapes = model.shapes
    in_shapes = [model.input_shape] + shapes[:-1]
    start = 0
    float_layer = None
    if first_layer_float:
        float_layer = layers[0]
        if not float_layer.has_params or not float_layer.rectify:
            raise ConversionError(
                "first_layer_float needs a rectifying parameter layer first")
        start = 1
    params = [i for i in range(start, len(layers)) if layers[i].has_params]
    if not params:
        raise ConversionError("no parameter layer left to convert")
    if frac_bits is None:
        frac_bits = _fixed_point_bits(
            _membrane_bound(layers[start:], in_shapes[start:], t_max, ext))

    out, k = [], 0
    for i in range(start, len(layers)):
        layer = layers[i]
        if layer.kind == FLATTEN:
            continue
        in_shape = in_shapes[i]
        if layer.kind == MAXPOOL2D:
            out.append(SpikingLayer(POOL_KIND, tuple(in_shape), tuple(shapes[i]), k,
                                    stride=layer.stride, pool=layer.pool))
            continue
        if layer.kind not in (DENSE, CONV2D):
            raise ConversionError(f"unsupported layer kind {layer.kind}")
        k += 1
        last = i == params[-1]
        if not last and not layer.rectify:
            raise ConversionError(
                f"layer {i} is a hidden layer without rectification; "
                "negative values can only be decoded in the output layer")
        kind = DENSE_KIND if layer.kind == DENSE else CONV_KIND
        out.append(_spiking_layer(kind, layer, in_shape, shapes[i], k,
                                  rectify_last if last else True, t_max, frac_bits))
    net = SpikingNetwork(t_max=t_max, input_shape=tuple(model.input_shape),
                         layers=tuple(out), frac_bits=frac_bits,
                         rectify_last=rectify_last, first_layer_float=first_layer_float,
                         ext=ext, delay=int(delay), float_layer=float_layer, source=model)
    return net


def with_weights(net, new_weights):
    """Copy of ``net`` with replaced parameter-layer weights (re-snapped,
    counter weights and rectifier magnitudes recomputed)."""
    layers = list(net.layers)
    for i, w in new_weights.items():
        lay = replace(layers[i], weight=snap(w, net.frac_bits))
        layers[i] = _with_aux(lay, net.t_max)
    return replace(net, layers=tuple(layers))


# -- simulation -----------------------------------------------------------------

@dataclass
class RunResult:
    """Outcome of simulating one sample.

    Spike times are global steps (-1 = no spike).  ``early`` marks units that
    fired during their encoding phase (before local ``T_max``, or at it with
    the membrane above threshold); ``forced`` marks rectifier-driven spikes;
    ``membrane`` holds ``u`` at the spike step, before any rectifier current.
    """
    net: SpikingNetwork = field(repr=False)
    input_times: np.ndarray
    times: list
    early: list
    forced: list
    membrane: list
    integrations: int
    total_steps: int
    input_saturated: np.ndarray | None = None
    trace: list | None = None

    def local_times(self, i):
        t = self.times[i]
        return np.where(t >= 0, t - self.net.frame_offset(i), -1)

    def decoded(self, i):
        """Values represented by the spikes of stage ``i`` (NaN = silent)."""
        t_max = self.net.t_max
        t = self.times[i]
        local = t - self.net.frame_offset(i)
        return np.where(t >= 0, (2 * t_max - local) / t_max, np.nan)

    @property
    def decoded_all(self):
        return [self.decoded(i) for i in range(len(self.times))]

    @property
    def output_times(self):
        return self.times[-1]

    @property
    def first_output_step(self):
        t = self.times[-1]
        return int(t[t >= 0].min()) if np.any(t >= 0) else None

    @property
    def n_spikes(self):
        return int(sum(np.count_nonzero(t >= 0) for t in self.times))

    @property
    def n_early(self):
        return int(sum(e.sum() for e in self.early))

    def to_json(self):
        net = self.net
        layers = []
        for i, lay in enumerate(net.layers):
            t = self.times[i].ravel()
            fired = np.flatnonzero(t >= 0)
            layers.append({
                "kind": lay.kind,
                "index": lay.index,
                "shape": list(lay.out_shape),
                "window_offset": net.frame_offset(i),
                "spikes": {str(int(u)): int(t[u]) for u in fired},
                "early": [int(u) for u in np.flatnonzero(self.early[i].ravel())],
                "forced": [int(u) for u in np.flatnonzero(self.forced[i].ravel())],
            })
        return {
            "t_max": net.t_max,
            "total_steps": self.total_steps,
            "first_output_step": self.first_output_step,
            "spikes": self.n_spikes,
            "early_spikes": self.n_early,
            "membrane_updates": self.integrations,
            "input_spikes": {str(int(u)): int(s) for u, s in
                             enumerate(self.input_times.ravel()) if s >= 0},
            "layers": layers,
        }


@dataclass
class BatchResult:
    """Simulation of several samples; arrays carry a leading batch axis."""
    net: SpikingNetwork = field(repr=False)
    input_times: np.ndarray
    times: list
    early: list
    forced: list
    membrane: list
    integrations: np.ndarray
    total_steps: int
    input_saturated: np.ndarray | None = None
    trace: list | None = None

    def __len__(self):
        return len(self.input_times)

    def __getitem__(self, b):
        trace = None
        if self.trace is not None:
            trace = [row[1:] for row in self.trace if row[0] == b]
        sat = None if self.input_saturated is None else self.input_saturated[b]
        return RunResult(self.net, self.input_times[b], [t[b] for t in self.times],
                         [e[b] for e in self.early], [f[b] for f in self.forced],
                         [m[b] for m in self.membrane], int(self.integrations[b]),
                         self.total_steps, sat, trace)

    def __iter__(self):
        return (self[b] for b in range(len(self)))

    def decoded(self, i):
        t_max = self.net.t_max
        t = self.times[i]
        local = t - self.net.frame_offset(i)
        return np.where(t >= 0, (2 * t_max - local) / t_max, np.nan)

    @property
    def first_output_step(self):
        t = self.times[-1].reshape(len(self), -1)
        tf = np.where(t >= 0, t, np.iinfo(np.int64).max)
        first = tf.min(axis=1)
        return np.where(first == np.iinfo(np.int64).max, -1, first)

    @property
    def spikes_per_sample(self):
        return sum((t.reshape(len(self), -1) >= 0).sum(axis=1) for t in self.times)

    @property
    def early_per_sample(self):
        return sum(e.reshape(len(self), -1).sum(axis=1) for e in self.early)


def encode_inputs(net, x):
    """Input spike times (and saturation flags) for a raw input batch."""
    x = np.asarray(x, dtype=np.float64)
    saturated = None
    if net.first_layer_float:
        if x.shape[1:] != tuple(net.input_shape):
            raise SimulationError(f"input batch shape {x.shape} does not match {net.input_shape}")
        y = net.float_layer.apply(x)
        saturated = y > 1.0
        x = np.clip(y, 0.0, 1.0)
    elif x.shape[1:] != tuple(net.spike_input_shape):
        if x.shape[1:] == tuple(net.input_shape):
            x = x.reshape((len(x),) + tuple(net.spike_input_shape))
        else:
            raise SimulationError(f"input batch shape {x.shape} does not match {net.input_shape}")
    try:
        times = codec.encode(x, net.t_max)
    except codec.CodecError as exc:
        raise SimulationError(str(exc)) from None
    return times, saturated


def _parse_probes(net, probes):
    if probes is None:
        return None
    if probes == "all":
        return [(i, u) for i in net.param_layers for u in range(net.layers[i].n_units)]
    out = []
    for i, u in probes:
        if not 0 <= i < len(net.layers) or net.layers[i].is_maxpool:
            raise SimulationError(f"probe layer {i} is not a parameter layer")
        if not 0 <= u < net.layers[i].n_units:
            raise SimulationError(f"probe unit {u} outside layer {i}")
        out.append((int(i), int(u)))
    return out


def simulate_batch(net, inputs=None, input_times=None, trace=None):
    """Simulate a batch of samples on the global clock.

    Give either raw ``inputs`` (values in [0, 1], or arbitrary values when
    the first layer runs in floating point) or pre-encoded ``input_times``
    (-1 = the input never spikes).  ``trace`` is None, ``"all"`` or a list of
    ``(layer, unit)`` probes; traced rows are
    ``(sample, step, layer, unit, current, membrane)``.
    """
    t_max = net.t_max
    saturated = None
    if input_times is None:
        if inputs is None:
            raise SimulationError("need inputs or input_times")
        input_times, saturated = encode_inputs(net, inputs)
    else:
        input_times = np.asarray(input_times)
        if np.any(input_times != np.floor(input_times)):
            raise SimulationError("input spike times must be integers")
        input_times = input_times.astype(np.int64)
        if input_times.shape[1:] != tuple(net.spike_input_shape):
            input_times = input_times.reshape((len(input_times),) + tuple(net.spike_input_shape))
        bad = (input_times != -1) & ((input_times < 0) | (input_times > t_max))
        if np.any(bad):
            raise SimulationError(f"input spike outside the window [0, {t_max}]")
    batch = len(input_times)
    probes = _parse_probes(net, trace)
    rows = [] if probes is not None else None

    layers = net.layers
    times = [np.full((batch,) + tuple(l.out_shape), -1, dtype=np.int64) for l in layers]
    early = [np.zeros((batch,) + tuple(l.out_shape), dtype=bool) for l in layers]
    forced = [np.zeros((batch,) + tuple(l.out_shape), dtype=bool) for l in layers]
    membrane = [np.full((batch,) + tuple(l.out_shape), np.nan) for l in layers]
    current = [None if l.is_maxpool else np.zeros((batch,) + tuple(l.out_shape))
               for l in layers]
    potential = [None if l.is_maxpool else np.zeros((batch,) + tuple(l.out_shape))
                 for l in layers]
    integrations = np.zeros(batch, dtype=np.int64)
    offsets = [net.frame_offset(i) for i in range(len(layers))]
    ends = [net.window_end(i) for i in range(len(layers))]
    theta = float(net.threshold)
    hop = 1 + net.delay

    end_step = net.end_step
    for t in range(end_step + 1):
        for i, lay in enumerate(layers):
            src = input_times if i == 0 else times[i - 1]
            if lay.is_maxpool:
                hits = src == t
                if not hits.any():
                    continue
                hits = hits.reshape((batch,) + tuple(lay.in_shape))
                pooled = ops.maxpool2d(hits, lay.pool, lay.stride) & (times[i] < 0)
                times[i][pooled] = t
                continue

            local = t - offsets[i]
            if local > ends[i]:
                continue
            c = current[i]
            arrivals = src == t - hop
            if t >= hop and arrivals.any():
                c += lay.linear(arrivals.astype(np.float64))
            if local == 1:
                c += lay.bias
            elif local == t_max + 1:
                c += lay.counter_weight
            if local < 1:
                continue

            u = potential[i]
            live = times[i] < 0
            np.add(u, c, out=u, where=live)
            integrations += live.reshape(batch, -1).sum(axis=1)
            fire = live & (u >= theta)
            if local == 2 * t_max and lay.rectify:
                push = live & ~fire
                if push.any():
                    forced[i][push] = True
                    membrane[i][push] = u[push]
                    u[push] += lay.beta[np.nonzero(push)[1:]]
                    fire |= push
            if fire.any():
                times[i][fire] = t
                natural = fire & ~forced[i]
                membrane[i][natural] = u[natural]
                if local <= t_max:
                    early[i][fire & ((local < t_max) | (u > theta))] = True
            if rows is not None:
                for (pi, unit) in probes:
                    if pi != i:
                        continue
                    cf = c.reshape(batch, -1)[:, unit]
                    uf = u.reshape(batch, -1)[:, unit]
                    for b in range(batch):
                        rows.append((b, t, i, unit, float(cf[b]), float(uf[b])))

    return BatchResult(net, input_times, times, early, forced, membrane,
                       integrations, end_step, saturated, rows)


def simulate(net, x=None, input_times=None, trace=None) -> RunResult:
    """Simulate one sample; ``x`` has the network's input shape."""
    if x is not None:
        x = np.asarray(x, dtype=np.float64)[None]
    if input_times is not None:
        if isinstance(input_times, (list, tuple)) and input_times and isinstance(
                input_times[0], codec.SpikeEvent):
            n = int(np.prod(net.spike_input_shape))
            input_times = codec.events_to_times(input_times, n)
        input_times = np.asarray(input_times)[None]
    return simulate_batch(net, x, input_times, trace)[0]


# -- classification -------------------------------------------------------------

def _classify_arrays(times, membrane):
    """Vectorised earliest-spike readout over (B, n_out) arrays."""
    big = np.iinfo(np.int64).max
    tf = np.where(times >= 0, times, big)
    first = tf.min(axis=1, keepdims=True)
    cand = (tf == first) & (first != big)
    mem = np.where(cand & ~np.isnan(membrane), membrane, -np.inf)
    best = mem.max(axis=1, keepdims=True)
    cand &= mem == best
    labels = np.where(cand.any(axis=1), cand.argmax(axis=1), -1)
    ambiguous = cand.sum(axis=1) > 1
    return labels, ambiguous


def classify(result):
    """(label, ambiguous) from the earliest output spike.

    Ties go to the larger membrane value at the spike step, then to the
    lowest index (flagged ambiguous).
    """
    t = np.asarray(result.times[-1]).reshape(1, -1)
    m = np.asarray(result.membrane[-1]).reshape(1, -1)
    labels, amb = _classify_arrays(t, m)
    if labels[0] < 0:
        raise ClassificationError("no output unit spiked within the simulated window")
    return int(labels[0]), bool(amb[0])


def classify_batch(batch):
    b = len(batch)
    return _classify_arrays(batch.times[-1].reshape(b, -1), batch.membrane[-1].reshape(b, -1))


@dataclass
class AggregateResult:
    n_samples: int
    accuracy: float
    predictions: np.ndarray
    labels: np.ndarray
    ambiguous: int
    silent_outputs: int
    mean_first_spike_step: float
    mean_total_steps: float
    spikes_per_sample: float
    units: int
    early_spikes: int
    early_spike_fraction: float
    early_per_layer: list
    sigma: np.ndarray
    omega: np.ndarray
    additions: np.ndarray
    ann_accuracy: float | None = None

    def summary(self):
        return {
            "samples": self.n_samples,
            "accuracy": self.accuracy,
            "error_pct": 100.0 * (1.0 - self.accuracy),
            "ann_accuracy": self.ann_accuracy,
            "ambiguous": self.ambiguous,
            "silent_outputs": self.silent_outputs,
            "mean_first_spike_step": self.mean_first_spike_step,
            "mean_total_steps": self.mean_total_steps,
            "spikes_per_sample": self.spikes_per_sample,
            "units": self.units,
            "early_spikes": self.early_spikes,
            "early_spike_fraction": self.early_spike_fraction,
            "early_per_layer": self.early_per_layer,
            "sigma_mean": float(self.sigma.mean()) if len(self.sigma) else 0.0,
            "omega_mean": float(self.omega.mean()) if len(self.omega) else 0.0,
            "additions_mean": float(self.additions.mean()) if len(self.additions) else 0.0,
        }


def run_dataset(net, inputs, labels, batch_size=250, with_ann=False, on_batch=None):
    """Simulate and classify a dataset; deterministic aggregate statistics.

    ``on_batch`` is called with every :class:`BatchResult` (e.g. to keep
    per-sample results or check invariants) before it is discarded.
    """
    from .metrics import count_ops_batch

    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(inputs) != len(labels):
        raise SimulationError("inputs and labels differ in length")
    preds, amb, silent, first, spikes = [], 0, 0, [], []
    early_layer = np.zeros(len(net.layers), dtype=np.int64)
    sig, omg, adds = [], [], []
    for s in range(0, len(inputs), batch_size):
        res = simulate_batch(net, inputs[s:s + batch_size])
        lab, ambiguous = classify_batch(res)
        preds.append(lab)
        amb += int(ambiguous.sum())
        silent += int((lab < 0).sum())
        fo = res.first_output_step
        first.append(fo[fo >= 0])
        spikes.append(res.spikes_per_sample)
        early_layer += np.array([e.reshape(len(res), -1).sum() for e in res.early])
        ops_ = count_ops_batch(res)
        sig.append(ops_["sigma"])
        omg.append(ops_["omega"])
        adds.append(ops_["additions"])
        if on_batch is not None:
            on_batch(res)
    n = len(labels)
    preds = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    firsts = np.concatenate(first) if first else np.zeros(0)
    ann_acc = None
    if with_ann and net.source is not None:
        from .model import predict
        ann_acc = float(np.mean(predict(net.source, inputs) == labels)) if n else 0.0
    units_total = net.n_neurons * n
    return AggregateResult(
        n_samples=n,
        accuracy=float(np.mean(preds == labels)) if n else 0.0,
        predictions=preds,
        labels=labels,
        ambiguous=amb,
        silent_outputs=silent,
        mean_first_spike_step=float(firsts.mean()) if len(firsts) else float("nan"),
        mean_total_steps=float(net.end_step),
        spikes_per_sample=float(np.concatenate(spikes).mean()) if n else 0.0,
        units=net.n_units,
        early_spikes=int(early_layer.sum()),
        early_spike_fraction=float(early_layer.sum() / units_total) if units_total else 0.0,
        early_per_layer=[int(v) for v in early_layer],
        sigma=np.concatenate(sig) if sig else np.zeros(0),
        omega=np.concatenate(omg) if omg else np.zeros(0),
        additions=np.concatenate(adds) if adds else np.zeros(0),
        ann_accuracy=ann_acc,
    )
