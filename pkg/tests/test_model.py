import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikeconv.model import (AnnModel, Layer, ModelError, count_ann_macs, forward,
                             load_model, save_model)


def _f32(rng, shape):
    return rng.normal(size=shape).astype(np.float32).astype(np.float64)


def _models():
    rng = np.random.default_rng(0)
    one = AnnModel((2,), [Layer.dense(_f32(rng, (2, 2)), _f32(rng, 2))])
    two = AnnModel((4,), [Layer.dense(_f32(rng, (3, 4)), _f32(rng, 3)),
                          Layer.dense(_f32(rng, (2, 3)), _f32(rng, 2), rectify=False)],
                   normalization={"percentile": 99.0, "scales": [1.5, 2.0]})
    four = AnnModel((1, 6, 6), [Layer.conv2d(_f32(rng, (2, 1, 3, 3)), _f32(rng, 2), padding=1),
                                Layer.maxpool2d(2), Layer.flatten(),
                                Layer.dense(_f32(rng, (5, 18)), _f32(rng, 5)),
                                Layer.dense(_f32(rng, (3, 5)), _f32(rng, 3), rectify=False)])
    return [one, two, four]


class TestForward:
    def test_toy_example(self):
        m = AnnModel((2,), [Layer.dense([[1, -1], [-1, 1]], [0, 0])])
        np.testing.assert_array_equal(forward(m, np.array([0.75, 0.25])), [0.5, 0.0])

    def test_identity(self):
        m = AnnModel((3,), [Layer.dense(np.eye(3), np.zeros(3), rectify=False)])
        x = np.array([0.1, -2.0, 3.0])
        np.testing.assert_array_equal(forward(m, x), x)

    def test_maxpool(self):
        m = AnnModel((1, 2, 2), [Layer.maxpool2d(2), Layer.flatten(),
                                 Layer.dense([[1.0]], [0.0], rectify=False)])
        _, acts = forward(m, np.array([[[1.0, 2.0], [3.0, 4.0]]]), record_activations=True)
        assert acts[0].tolist() == [[[4.0]]]

    def test_records_param_and_pool_outputs(self):
        m = _models()[2]
        out, acts = forward(m, np.zeros((3, 1, 6, 6)), record_activations=True)
        assert [a.shape for a in acts] == [(3, 2, 6, 6), (3, 2, 3, 3), (3, 5), (3, 3)]
        assert out.shape == (3, 3)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_rectified_outputs_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        m = AnnModel((5,), [Layer.dense(rng.normal(size=(4, 5)), rng.normal(size=4))])
        assert np.all(forward(m, rng.normal(size=(8, 5))) >= 0)

    def test_shape_mismatch(self):
        with pytest.raises(ModelError):
            forward(_models()[0], np.zeros(3))


class TestMacs:
    def test_dense(self):
        m = AnnModel((784,), [Layer.dense(np.zeros((10, 784)), np.zeros(10))])
        assert count_ann_macs(m) == 7840

    def test_conv(self):
        m = AnnModel((1, 4, 4), [Layer.conv2d(np.zeros((1, 1, 3, 3)), np.zeros(1))])
        assert count_ann_macs(m) == 36

    def test_mlp(self):
        m = AnnModel((784,), [Layer.dense(np.zeros((128, 784)), np.zeros(128)),
                              Layer.dense(np.zeros((10, 128)), np.zeros(10))])
        assert count_ann_macs(m) == 101_632

    def test_additive(self):
        a = AnnModel((6,), [Layer.dense(np.zeros((4, 6)), np.zeros(4))])
        b = AnnModel((4,), [Layer.dense(np.zeros((3, 4)), np.zeros(3))])
        ab = AnnModel((6,), list(a.layers) + list(b.layers))
        assert count_ann_macs(ab) == count_ann_macs(a) + count_ann_macs(b)


class TestModelValidation:
    def test_bias_shape(self):
        with pytest.raises(ModelError):
            Layer.dense(np.zeros((3, 2)), np.zeros(2))

    def test_chain_mismatch(self):
        with pytest.raises(ModelError):
            AnnModel((3,), [Layer.dense(np.zeros((2, 4)), np.zeros(2))])

    def test_needs_param_layer(self):
        with pytest.raises(ModelError):
            AnnModel((4,), [Layer.flatten()])

    def test_non_finite(self):
        with pytest.raises(ModelError):
            Layer.dense([[np.nan]], [0.0])

    def test_pool_has_no_params(self):
        with pytest.raises(ModelError):
            Layer("MaxPool2d", np.zeros((1, 1)), pool=2)


class TestModelIO:
    @pytest.mark.parametrize("idx", [0, 1, 2])
    def test_round_trip_bit_exact(self, tmp_path, idx):
        m = _models()[idx]
        save_model(m, tmp_path / "m")
        assert load_model(tmp_path / "m") == m

    def test_minimal_manifest(self, tmp_path):
        (tmp_path / "model.json").write_text(json.dumps({
            "input_shape": [2], "normalization": None,
            "layers": [{"kind": "Dense", "in_features": 2, "out_features": 2,
                        "rectify": True, "weight_file": "w.bin", "bias_file": "b.bin"}]}))
        (tmp_path / "w.bin").write_bytes(np.array([1, 2, 3, 4], "<f4").tobytes())
        (tmp_path / "b.bin").write_bytes(np.zeros(2, "<f4").tobytes())
        m = load_model(tmp_path)
        assert len(m.layers) == 1
        np.testing.assert_array_equal(m.layers[0].weight, [[1, 2], [3, 4]])

    def test_blob_size_mismatch(self, tmp_path):
        (tmp_path / "model.json").write_text(json.dumps({
            "input_shape": [2], "normalization": None,
            "layers": [{"kind": "Dense", "in_features": 2, "out_features": 3,
                        "rectify": True, "weight_file": "w.bin", "bias_file": "b.bin"}]}))
        (tmp_path / "w.bin").write_bytes(np.zeros(5, "<f4").tobytes())
        (tmp_path / "b.bin").write_bytes(np.zeros(3, "<f4").tobytes())
        with pytest.raises(ModelError, match="expected 6"):
            load_model(tmp_path)

    def test_unknown_kind(self, tmp_path):
        (tmp_path / "model.json").write_text(json.dumps(
            {"input_shape": [2], "layers": [{"kind": "LSTM"}]}))
        with pytest.raises(ModelError, match="unknown"):
            load_model(tmp_path)

    def test_missing_blob(self, tmp_path):
        save_model(_models()[0], tmp_path)
        (tmp_path / "layer0_bias.bin").unlink()
        with pytest.raises(ModelError, match="missing"):
            load_model(tmp_path)

    def test_non_float32_needs_narrow(self, tmp_path):
        m = AnnModel((1,), [Layer.dense([[0.1]], [0.0])])
        with pytest.raises(ModelError):
            save_model(m, tmp_path / "a")
        save_model(m, tmp_path / "b", narrow=True)
        assert load_model(tmp_path / "b").layers[0].weight[0, 0] == np.float32(0.1)
