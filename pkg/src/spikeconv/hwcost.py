"""Neuromorphic deployment cost model.

8-bit weight quantization, per-hop transmission delay, greedy core
placement and a static/dynamic power estimate.  Power figures are a cost
model driven by calibration constants, not a device measurement.

Default constants come from a published MNIST deployment: 11 cores drawing
5.09 mW static, an embedded-CPU share of 0.14 mW static and 22.66 mW
dynamic, 9.29 mW core dynamic power for about 177k operations per 4.91 ms
inference of 91 steps.  The CPU dynamic share is not part of the default
model; set ``overhead_dynamic_mW`` to include it.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .snn import _with_aux, snap

COST_MODEL_NOTE = "cost model estimate from calibration constants; not a hardware measurement"

_REF_CORES = 11
_REF_STATIC_CORE_MW = 5.09
_REF_DYNAMIC_CORE_MW = 9.29
_REF_LATENCY_MS = 4.91
_REF_STEPS = 91
_REF_OPS = 177_000


class PlacementError(ValueError):
    pass


def quantize_weights_8bit(net):
    """Symmetric per-layer 8-bit weights (scale ``max|w| / 127``).

    Counter weights and rectifier magnitudes are recomputed from the
    quantized weights, so the readout current stays exactly 1.  Biases keep
    full resolution.
    """
    layers = list(net.layers)
    for i, lay in enumerate(layers):
        if lay.is_maxpool:
            continue
        peak = float(np.max(np.abs(lay.weight))) if lay.weight.size else 0.0
        if peak == 0.0:
            continue
        scale = peak / 127.0
        q = np.clip(np.rint(lay.weight / scale), -127, 127) * scale
        layers[i] = _with_aux(replace(lay, weight=snap(q, net.frac_bits)), net.t_max)
    return replace(net, layers=tuple(layers))


def apply_transmission_delay(net, d):
    """Add ``d`` steps of latency to every hop between layers."""
    if int(d) != d or d < 0:
        raise ValueError(f"delay must be a non-negative integer, got {d}")
    return replace(net, delay=int(d))


@dataclass
class Placement:
    assignments: list           # per stage: core index of every unit
    cores_used: int
    core_neurons: list
    core_synapses: list
    neurons_per_core: int
    synapses_per_core: int | None

    @property
    def neuron_utilization(self):
        return [n / self.neurons_per_core for n in self.core_neurons]

    @property
    def synapse_utilization(self):
        if not self.synapses_per_core:
            return None
        return [s / self.synapses_per_core for s in self.core_synapses]

    def to_json(self):
        return {"cores_used": self.cores_used,
                "neurons_per_core": self.neurons_per_core,
                "synapses_per_core": self.synapses_per_core,
                "core_neurons": self.core_neurons,
                "core_synapses": self.core_synapses,
                "mean_neuron_utilization": float(np.mean(self.neuron_utilization))}


def synapse_demand(net):
    """Synapses each unit needs: fan-in plus counter and rectifier inputs."""
    out = []
    for lay in net.layers:
        d = lay.fanin()
        if not lay.is_maxpool:
            d = d + 1 + (1 if lay.rectify else 0)
        out.append(d)
    return out


def place_cores(net, neurons_per_core=1024, synapses_per_core=None, demand=None):
    """Greedy first-fit placement of units onto cores, in layer order.

    ``synapses_per_core=None`` means unlimited synapse memory.  ``demand``
    overrides the per-stage synapse demand arrays (mainly for testing).
    """
    if neurons_per_core < 1 or (synapses_per_core is not None and synapses_per_core < 1):
        raise PlacementError("core capacities must be positive")
    demand = synapse_demand(net) if demand is None else demand
    cap_s = math.inf if synapses_per_core is None else synapses_per_core
    neurons, synapses, assignments = [], [], []
    for stage in demand:
        flat = np.asarray(stage, dtype=np.int64).ravel()
        cores = np.empty(flat.size, dtype=np.int64)
        for u, need in enumerate(flat):
            if need > cap_s:
                raise PlacementError(
                    f"a unit needs {need} synapses, more than a core holds ({synapses_per_core})")
            for c in range(len(neurons)):
                if neurons[c] < neurons_per_core and synapses[c] + need <= cap_s:
                    break
            else:
                neurons.append(0)
                synapses.append(0)
                c = len(neurons) - 1
            neurons[c] += 1
            synapses[c] += int(need)
            cores[u] = c
        assignments.append(cores.reshape(np.shape(stage)))
    return Placement(assignments, len(neurons), neurons, synapses,
                     neurons_per_core, synapses_per_core)


@dataclass(frozen=True)
class PowerParams:
    static_mW_per_core: float = _REF_STATIC_CORE_MW / _REF_CORES
    dynamic_uJ_per_op: float = _REF_DYNAMIC_CORE_MW * _REF_LATENCY_MS / _REF_OPS
    overhead_mW: float = 0.14              # embedded CPU, static
    overhead_dynamic_mW: float = 0.0       # embedded CPU, dynamic (22.66 in the reference)
    step_us: float = 1000.0 * _REF_LATENCY_MS / _REF_STEPS

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (v >= 0 if k == "overhead_dynamic_mW" else v > 0):
                raise ValueError(f"power parameter {k} must be positive, got {v}")

    @classmethod
    def from_json(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown power parameters: {sorted(unknown)}")
        return cls(**data)


def edp(energy_uJ, latency_ms):
    """Energy-delay product in uJ*s."""
    return energy_uJ * latency_ms / 1000.0


@dataclass(frozen=True)
class PowerReport:
    static_cores_mW: float
    static_cpu_mW: float
    dynamic_cores_mW: float
    dynamic_cpu_mW: float
    latency_ms: float
    steps: int
    cores_used: int
    ops: float

    @property
    def static_mW(self):
        return self.static_cores_mW + self.static_cpu_mW

    @property
    def dynamic_mW(self):
        return self.dynamic_cores_mW + self.dynamic_cpu_mW

    @property
    def total_mW(self):
        return self.static_mW + self.dynamic_mW

    @property
    def energy_uJ(self):
        return self.total_mW * self.latency_ms

    @property
    def edp_uJs(self):
        return edp(self.energy_uJ, self.latency_ms)

    def to_json(self):
        return {
            "note": COST_MODEL_NOTE,
            "power_mW": {
                "static": {"cpu": self.static_cpu_mW, "cores": self.static_cores_mW,
                           "total": self.static_mW},
                "dynamic": {"cpu": self.dynamic_cpu_mW, "cores": self.dynamic_cores_mW,
                            "total": self.dynamic_mW},
                "total": {"cpu": self.static_cpu_mW + self.dynamic_cpu_mW,
                          "cores": self.static_cores_mW + self.dynamic_cores_mW,
                          "total": self.total_mW},
            },
            "latency_ms": self.latency_ms,
            "steps_per_inference": self.steps,
            "energy_per_inference_uJ": self.energy_uJ,
            "edp_uJs": self.edp_uJs,
            "cores_used": self.cores_used,
            "ops_per_inference": self.ops,
        }


def estimate_power(placement, ops, steps, params=None) -> PowerReport:
    """Static/dynamic power for one inference.

    ``ops`` is an :class:`~spikeconv.metrics.OpCount` or an operation count
    (Omega); ``steps`` the time steps per inference.
    """
    params = params or PowerParams()
    omega = float(getattr(ops, "omega", ops))
    if omega < 0 or steps < 1:
        raise ValueError("ops must be non-negative and steps positive")
    latency_ms = steps * params.step_us / 1000.0
    dyn = omega * params.dynamic_uJ_per_op / latency_ms
    return PowerReport(
        static_cores_mW=placement.cores_used * params.static_mW_per_core,
        static_cpu_mW=params.overhead_mW,
        dynamic_cores_mW=dyn,
        dynamic_cpu_mW=params.overhead_dynamic_mW,
        latency_ms=latency_ms,
        steps=int(steps),
        cores_used=placement.cores_used,
        ops=omega,
    )
