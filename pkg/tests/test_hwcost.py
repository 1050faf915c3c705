import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import normalized_random, toy_model
from spikeconv import hwcost, snn
from spikeconv.model import AnnModel, Layer

NORM = {"percentile": 100.0, "scales": [1.0]}


def _net(w, t_max=16):
    m = AnnModel((len(w[0]),), [Layer.dense(w, np.zeros(len(w)))], normalization=NORM)
    return snn.convert(m, t_max)


class TestQuantization:
    def test_symmetric_extremes_unchanged(self):
        net = _net([[1.0, -1.0]])
        q = hwcost.quantize_weights_8bit(net)
        np.testing.assert_array_equal(q.layers[0].weight, [[1.0, -1.0]])

    def test_grid_multiples_unchanged(self):
        w = np.array([[127, -64, 3, 0]]) / 128.0
        q = hwcost.quantize_weights_8bit(_net(w))
        np.testing.assert_array_equal(q.layers[0].weight, w)

    def test_levels_and_idempotence(self):
        rng = np.random.default_rng(0)
        model, _ = normalized_random(rng)
        net = snn.convert(model, 16)
        q = hwcost.quantize_weights_8bit(net)
        for lay in q.layers:
            if lay.is_maxpool:
                continue
            scale = np.max(np.abs(lay.weight)) / 127
            assert len(np.unique(np.abs(lay.weight))) <= 128
            np.testing.assert_allclose(lay.weight / scale, np.rint(lay.weight / scale),
                                       atol=1e-6)
        again = hwcost.quantize_weights_8bit(q)
        for a, b in zip(q.layers, again.layers):
            np.testing.assert_array_equal(a.weight, b.weight)

    def test_zero_layer_untouched(self):
        net = _net([[0.0, 0.0]])
        q = hwcost.quantize_weights_8bit(net)
        np.testing.assert_array_equal(q.layers[0].weight, [[0.0, 0.0]])

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_current_balance_after_quantization(self, seed):
        rng = np.random.default_rng(seed)
        model, x = normalized_random(rng, n_inputs=1, max_width=8)
        net = hwcost.quantize_weights_8bit(snn.convert(model, 8))
        for lay in net.layers:
            if not lay.is_maxpool:
                total = lay.linear(np.ones((1,) + tuple(lay.in_shape)))[0]
                np.testing.assert_array_equal(total + lay.bias + lay.counter_weight, 1.0)
        r = snn.simulate(net, x[0], trace="all")
        first_early = next((i for i, e in enumerate(r.early) if e.any()), len(net.layers))
        for step, layer, unit, c, _ in r.trace:
            local = step - net.frame_offset(layer)
            if layer < first_early and local > 8 and step <= r.times[layer].ravel()[unit]:
                assert c == 1.0


class TestDelay:
    def _model(self):
        rng = np.random.default_rng(4)
        model, x = normalized_random(rng, n_inputs=3)
        while len(model.param_indices) < 2:
            model, x = normalized_random(rng, n_inputs=3)
        return model, x

    def test_zero_delay_is_identity(self):
        model, x = self._model()
        net = snn.convert(model, 8)
        a = snn.simulate_batch(net, x)
        b = snn.simulate_batch(hwcost.apply_transmission_delay(net, 0), x)
        for ta, tb in zip(a.times, b.times):
            np.testing.assert_array_equal(ta, tb)

    @pytest.mark.parametrize("d", [1, 3])
    def test_latency_only(self, d):
        model, x = self._model()
        net = snn.convert(model, 8)
        slow = hwcost.apply_transmission_delay(net, d)
        a = snn.simulate_batch(net, x)
        b = snn.simulate_batch(slow, x)
        n_layers = len(net.param_layers)
        np.testing.assert_array_equal(b.first_output_step, a.first_output_step + n_layers * d)
        for i in range(len(net.layers)):
            np.testing.assert_array_equal(a.decoded(i), b.decoded(i))
        assert slow.end_step == net.end_step + n_layers * d

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            hwcost.apply_transmission_delay(snn.convert(toy_model(), 4), -1)


class TestPlacement:
    def test_neuron_bound(self):
        p = hwcost.place_cores(None, 1024, demand=[np.ones(5400, dtype=int)])
        assert p.cores_used == 6

    def test_synapse_bound(self):
        p = hwcost.place_cores(None, 1024, 16384, demand=[np.full(10, 10_000)])
        assert p.cores_used == 10
        assert max(p.synapse_utilization) < 0.62

    def test_single_unit(self):
        assert hwcost.place_cores(None, 1024, demand=[np.ones(1, dtype=int)]).cores_used == 1

    def test_oversized_unit(self):
        with pytest.raises(hwcost.PlacementError):
            hwcost.place_cores(None, 1024, 100, demand=[np.array([101])])

    def test_bad_capacity(self):
        with pytest.raises(hwcost.PlacementError):
            hwcost.place_cores(None, 0, demand=[np.ones(1, dtype=int)])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.integers(1, 50), min_size=1, max_size=40), min_size=1,
                    max_size=4),
           st.integers(1, 16), st.integers(50, 200))
    def test_capacities_respected(self, stages, n_cap, s_cap):
        demand = [np.array(s) for s in stages]
        p = hwcost.place_cores(None, n_cap, s_cap, demand=demand)
        assert max(p.core_neurons) <= n_cap and max(p.core_synapses) <= s_cap
        counts = np.zeros(p.cores_used, dtype=int)
        syn = np.zeros(p.cores_used, dtype=int)
        for d, a in zip(demand, p.assignments):
            np.add.at(counts, a, 1)
            np.add.at(syn, a, d)
        assert counts.tolist() == p.core_neurons and syn.tolist() == p.core_synapses
        total_units = sum(len(s) for s in stages)
        assert p.cores_used >= -(-total_units // n_cap)
        assert p.cores_used >= -(-int(sum(map(sum, stages))) // s_cap)

    def test_network_demand(self):
        net = snn.convert(toy_model(), 4)
        assert [d.tolist() for d in hwcost.synapse_demand(net)] == [[4, 4]]
        p = hwcost.place_cores(net, 1)
        assert p.cores_used == 2 and p.to_json()["core_synapses"] == [4, 4]


class TestPower:
    def test_edp(self):
        assert hwcost.edp(182.46, 4.91) == pytest.approx(0.896, abs=5e-4)

    def test_default_static_per_core(self):
        assert hwcost.PowerParams().static_mW_per_core == pytest.approx(0.4627, abs=1e-4)

    def test_reference_deployment(self):
        p = hwcost.place_cores(None, 1, demand=[np.ones(11, dtype=int)])
        rep = hwcost.estimate_power(p, 177_000, 91)
        assert rep.static_mW == pytest.approx(5.23)
        assert rep.dynamic_cores_mW == pytest.approx(9.29)
        assert rep.latency_ms == pytest.approx(4.91)

    def test_zero_ops(self):
        p = hwcost.place_cores(None, 1024, demand=[np.ones(1, dtype=int)])
        params = hwcost.PowerParams()
        rep = hwcost.estimate_power(p, 0, 10, params)
        assert rep.dynamic_mW == 0.0
        assert rep.static_mW == pytest.approx(params.static_mW_per_core + params.overhead_mW)

    def test_identities(self):
        p = hwcost.place_cores(None, 4, demand=[np.ones(9, dtype=int)])
        rep = hwcost.estimate_power(p, 50_000, 48,
                                    hwcost.PowerParams(overhead_dynamic_mW=22.66))
        assert rep.total_mW == pytest.approx(rep.static_mW + rep.dynamic_mW)
        assert rep.edp_uJs == pytest.approx(rep.energy_uJ * rep.latency_ms / 1000)
        data = rep.to_json()
        assert data["power_mW"]["dynamic"]["cpu"] == 22.66
        assert "not a hardware measurement" in data["note"]

    def test_static_monotone_in_cores(self):
        static = []
        for n in (1, 3, 7):
            p = hwcost.place_cores(None, 1, demand=[np.ones(n, dtype=int)])
            static.append(hwcost.estimate_power(p, 100, 10).static_mW)
        assert static == sorted(static)

    def test_bad_params(self):
        with pytest.raises(ValueError):
            hwcost.PowerParams(step_us=0)
        with pytest.raises(ValueError):
            hwcost.PowerParams.from_json({"volts": 1})
