"""Operation counts, the addition/MAC energy model and early-spike statistics.

Operation model: every spike costs one addition per outgoing synapse
(``sigma``), and every unit integrates its current for at most ``2 T_max``
steps, so a run needs at most ``Omega = sigma + 2 nu T_max`` additions.
``sigma`` includes the auxiliary synapses of each unit: the counter spike,
the rectifier (rectifying layers only) and the bias (nonzero biases only).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

SWEEP_COLUMNS = ("dataset", "T_max", "percentile", "error", "omega", "sigma",
                 "spikes", "early_fraction", "ann_macs", "energy_ratio")

ANN_BITS = (8, 8)
SNN_BITS = (16, 8)


@dataclass(frozen=True)
class OpCount:
    sigma: int
    nu: int
    t_max: int
    spikes: int
    additions: int = 0
    sigma_per_layer: tuple = field(default=(), compare=False)
    extension: int = 0  # extra integration steps of a non-rectified output layer

    @property
    def omega(self):
        return self.sigma + 2 * self.nu * self.t_max

    @property
    def update_bound(self):
        """Addition bound including the output layer's negative extension."""
        return self.omega + self.extension

    def to_json(self):
        return {"sigma": self.sigma, "nu": self.nu, "t_max": self.t_max,
                "omega": self.omega, "spikes": self.spikes,
                "trace_additions": self.additions,
                "sigma_per_layer": list(self.sigma_per_layer),
                "update_bound": self.update_bound}


def _virtual_synapses(net):
    """Auxiliary synapse events per stage (counter, rectifier, bias)."""
    out = []
    for lay in net.layers:
        if lay.is_maxpool:
            out.append(0)
            continue
        n = lay.n_units
        out.append(n + (n if lay.rectify else 0) + int(np.count_nonzero(lay.bias)))
    return out


def _extension_term(net):
    last = net.layers[net.param_layers[-1]]
    return 0 if last.rectify else last.n_units * net.ext


def _sigma_layers(net, input_times, times):
    """Per-stage sigma for arrays with a leading batch axis, shape (S, B)."""
    fan = net.fanouts
    virtual = _virtual_synapses(net)
    batch = len(input_times)
    rows = []
    producers = [input_times] + list(times[:-1])
    for j, src in enumerate(producers):
        fired = (src.reshape(batch, -1) >= 0)
        rows.append(fired @ fan[j].ravel() + virtual[j])
    return np.stack(rows)


def count_ops_batch(batch):
    """Vectorised counts for a :class:`~spikeconv.snn.BatchResult`."""
    net = batch.net
    per_layer = _sigma_layers(net, batch.input_times, batch.times)
    sigma = per_layer.sum(axis=0)
    omega = sigma + 2 * net.n_neurons * net.t_max
    return {"sigma": sigma, "omega": omega,
            "additions": sigma + batch.integrations,
            "spikes": batch.spikes_per_sample,
            "sigma_per_layer": per_layer}


def count_ops(result, net=None) -> OpCount:
    """Operation counts of a single :class:`~spikeconv.snn.RunResult`."""
    net = net or result.net
    per_layer = _sigma_layers(net, result.input_times[None],
                              [t[None] for t in result.times])[:, 0]
    sigma = int(per_layer.sum())
    return OpCount(sigma=sigma, nu=net.n_neurons, t_max=net.t_max,
                   spikes=result.n_spikes, additions=sigma + int(result.integrations),
                   sigma_per_layer=tuple(int(v) for v in per_layer),
                   extension=_extension_term(net))


def _check_bits(b1, b2):
    if b1 <= 0 or b2 <= 0:
        raise ValueError(f"bitwidths must be positive, got ({b1}, {b2})")


def energy_add(b1, b2):
    """Cost of adding operands of ``b1`` and ``b2`` bits."""
    _check_bits(b1, b2)
    return max(b1, b2) + abs(b1 - b2) / 2


def energy_mac(b1, b2):
    _check_bits(b1, b2)
    return b1 * b2


@dataclass(frozen=True)
class EnergyReport:
    ann_macs: int
    ann_bits: tuple
    snn_adds: int
    snn_bits: tuple
    ann_energy: float
    snn_energy: float

    @property
    def ratio(self):
        return self.ann_energy / self.snn_energy

    def to_json(self):
        return {"ann_macs": self.ann_macs, "ann_bits": list(self.ann_bits),
                "snn_adds": self.snn_adds, "snn_bits": list(self.snn_bits),
                "ann_energy": self.ann_energy, "snn_energy": self.snn_energy,
                "ratio": self.ratio}


def energy_report(ann_macs, ops, ann_bits=ANN_BITS, snn_bits=SNN_BITS) -> EnergyReport:
    """Dynamic-energy comparison; ``ops`` is an :class:`OpCount` or an Omega."""
    omega = ops.omega if isinstance(ops, OpCount) else ops
    if ann_macs <= 0 or omega <= 0:
        raise ValueError("operation counts must be positive")
    ann = float(ann_macs * energy_mac(*ann_bits))
    snn = float(omega * energy_add(*snn_bits))
    return EnergyReport(int(ann_macs), tuple(ann_bits), int(omega), tuple(snn_bits), ann, snn)


@dataclass(frozen=True)
class EarlyStats:
    fraction: float
    flagged: int
    units: int
    per_layer: tuple

    def to_json(self):
        return {"fraction": self.fraction, "flagged": self.flagged,
                "units": self.units, "per_layer": list(self.per_layer)}


def early_spike_stats(results) -> EarlyStats:
    """Fraction of integrating units that fired early, over many runs.

    Accepts single-sample results and batch results alike.
    """
    per_layer, units = None, 0
    for r in results:
        n = len(r.input_times) if np.ndim(r.integrations) else 1
        counts = np.array([int(np.count_nonzero(e)) for e in r.early])
        per_layer = counts if per_layer is None else per_layer + counts
        units += n * r.net.n_neurons
    if per_layer is None:
        return EarlyStats(0.0, 0, 0, ())
    flagged = int(per_layer.sum())
    return EarlyStats(flagged / units if units else 0.0, flagged, units,
                      tuple(int(v) for v in per_layer))


def write_sweep_csv(rows, fh):
    """Write sweep rows (mappings keyed by :data:`SWEEP_COLUMNS`)."""
    w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\r\n",
                       extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: row.get(k, "") for k in SWEEP_COLUMNS})
