"""Closed-form prediction of what the spiking network computes.

Without early firing a unit's membrane at the end of its encoding phase is
``m = T_max * a`` with ``a = sum(w q) + b`` on the grid inputs ``q``; the unit
then fires ``ceil(T_max - m)`` steps later.  Everything is carried as integer
numerators ``n`` (value ``n / T_max``), so the prediction is exact and can be
compared with the simulator spike for spike.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import codec, ops
from .snn import SpikingNetwork, _classify_arrays, convert


@dataclass
class OracleResult:
    """Predicted grid numerators, spike times and labels.

    ``steps[i]`` holds integer numerators (value = steps / T_max), with a
    sentinel below ``-ext`` for silent units; ``times[i]`` are global steps
    (-1 = silent).  Arrays have a leading batch axis when ``batched``.
    """
    net: SpikingNetwork = field(repr=False)
    input_steps: np.ndarray
    steps: list
    membrane: list
    times: list
    predicted_early: list
    labels: np.ndarray
    batched: bool = True

    def values(self, i):
        t_max = self.net.t_max
        s = self.steps[i]
        return np.where(self.times[i] >= 0, s / t_max, np.nan)

    @property
    def activations(self):
        return [self.values(i) for i in range(len(self.steps))]

    @property
    def label(self):
        return int(self.labels) if not self.batched else self.labels

    def __getitem__(self, b):
        if not self.batched:
            raise TypeError("single-sample oracle result")
        return OracleResult(self.net, self.input_steps[b], [s[b] for s in self.steps],
                            [m[b] for m in self.membrane], [t[b] for t in self.times],
                            [e[b] for e in self.predicted_early], self.labels[b], False)

    def __len__(self):
        return len(self.input_steps) if self.batched else 1


def input_steps(net, x):
    """Grid numerators ``ceil(T_max p)`` of the encoded input batch."""
    x = np.asarray(x, dtype=np.float64)
    if net.first_layer_float:
        x = np.clip(net.float_layer.apply(x), 0.0, 1.0)
    x = x.reshape((len(x),) + tuple(net.spike_input_shape))
    codec.encode(x, net.t_max)  # range checks
    return codec.ceil_scaled(x, net.t_max)


def oracle_batch(net, x=None, input_times=None):
    """Oracle prediction for a batch of raw inputs or encoded spike times."""
    t_max = net.t_max
    if input_times is not None:
        it = np.asarray(input_times, dtype=np.int64)
        it = it.reshape((len(it),) + tuple(net.spike_input_shape))
        n = np.where(it >= 0, t_max - it, 0)
    else:
        n = input_steps(net, x)
    batch = len(n)
    prev = n
    steps, mems, times, early = [], [], [], []
    silent = np.iinfo(np.int64).min // 4
    for i, lay in enumerate(net.layers):
        offset = net.frame_offset(i)
        if lay.is_maxpool:
            cur = ops.maxpool2d(prev.reshape((batch,) + tuple(lay.in_shape)), lay.pool, lay.stride)
            steps.append(cur)
            mems.append(np.full(cur.shape, np.nan))
            times.append(np.where(cur > silent, offset + 2 * t_max - cur, -1))
            early.append(np.zeros(cur.shape, dtype=bool))
            prev = cur
            continue
        src = np.where(prev > silent, prev, 0).astype(np.float64)
        m = lay.linear(src) + lay.bias * t_max
        k = np.floor(m).astype(np.int64)
        flagged = m > t_max
        k = np.minimum(k, t_max)
        if lay.rectify:
            k = np.maximum(k, 0)
            fire = np.ones(k.shape, dtype=bool)
        else:
            fire = k >= -net.ext
        # membrane when the spike is emitted (before any rectifier current)
        mem = m + (t_max - k)
        mem = np.where(flagged, np.nan, mem)
        k = np.where(fire, k, silent)
        steps.append(k)
        mems.append(mem)
        times.append(np.where(fire, offset + 2 * t_max - k, -1))
        early.append(flagged)
        prev = k
    labels, _ = _classify_arrays(times[-1].reshape(batch, -1),
                                 mems[-1].reshape(batch, -1))
    return OracleResult(net, n, steps, mems, times, early, labels, True)


def oracle_forward(model, x, t_max=None, **options) -> OracleResult:
    """Oracle for one input.  ``model`` is a :class:`SpikingNetwork` or an
    :class:`AnnModel` (converted with ``t_max`` and ``options`` first)."""
    net = model
    if not isinstance(model, SpikingNetwork):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            net = convert(model, t_max, **options)
    return oracle_batch(net, np.asarray(x, dtype=np.float64)[None])[0]


# -- differential comparison ----------------------------------------------------

def _structural(lay):
    if lay.is_maxpool:
        return lambda a: _pool_reach(lay, a)
    mask = replace(lay, weight=(lay.weight != 0).astype(np.float64))
    return lambda a: mask.linear(a[None].astype(np.float64))[0] > 0


def _pool_reach(lay, a):
    return ops.maxpool2d(a.reshape((1,) + tuple(lay.in_shape)), lay.pool, lay.stride)[0]


def taint_cone(net, early):
    """Units that an early spike anywhere upstream can influence."""
    cone, prev = [], None
    for i, lay in enumerate(net.layers):
        here = np.asarray(early[i], dtype=bool).copy()
        if prev is not None and prev.any():
            here |= _structural(lay)(prev.reshape(lay.in_shape))
        cone.append(here)
        prev = here
    return cone


@dataclass
class DiffReport:
    deltas: list
    mismatches: int
    mismatched_units: list
    early_units: list
    unexplained: list

    @property
    def explained(self):
        """Every mismatch lies downstream of (or at) an early-firing unit."""
        return not self.unexplained

    @property
    def early_count(self):
        return len(self.early_units)

    def to_json(self):
        return {
            "mismatches": self.mismatches,
            "early_spikes": len(self.early_units),
            "explained_by_early_spikes": self.explained,
            "unexplained": [list(u) for u in self.unexplained],
            "mismatched_units": [list(u) for u in self.mismatched_units],
            "deltas": {str(i): {str(int(u)): int(d[u]) for u in np.flatnonzero(d)}
                       for i, d in enumerate(self.deltas)},
        }


def diff(sim, oracle) -> DiffReport:
    """Compare one simulated run with the oracle unit by unit.

    A unit mismatches if its spike time differs or exactly one side is
    silent; the delta is ``sim - oracle`` (silence counts as time -1).
    """
    if len(sim.times) != len(oracle.times):
        raise ValueError("sim and oracle describe different networks")
    deltas, mismatched, early_units, unexplained = [], [], [], []
    cone = taint_cone(sim.net, sim.early)
    for i, (a, b) in enumerate(zip(sim.times, oracle.times)):
        a = np.asarray(a).ravel()
        b = np.asarray(b).ravel()
        if a.shape != b.shape:
            raise ValueError(f"stage {i}: shape {a.shape} vs {b.shape}")
        d = a - b
        deltas.append(d)
        bad = np.flatnonzero(d)
        mismatched += [(i, int(u)) for u in bad]
        early_units += [(i, int(u)) for u in np.flatnonzero(np.asarray(sim.early[i]).ravel())]
        c = cone[i].ravel()
        unexplained += [(i, int(u)) for u in bad if not c[u]]
    return DiffReport(deltas, len(mismatched), mismatched, early_units, unexplained)
