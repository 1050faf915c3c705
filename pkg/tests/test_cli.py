import csv
import json

import pytest

from conftest import DATA_DIR
from helpers import toy_model
from spikeconv import cli
from spikeconv.model import save_model

DATA = str(DATA_DIR)


@pytest.fixture
def toy_net(tmp_path):
    save_model(toy_model(), tmp_path / "toy")
    net = tmp_path / "net.json"
    assert cli.main(["convert", str(tmp_path / "toy"), "--tmax", "16", "--out", str(net)]) == 0
    return net


def _report(path):
    data = json.loads(path.read_text())
    data["manifest"].pop("timestamp")
    return data


class TestToyNetwork:
    def test_convert_summary(self, toy_net):
        meta = json.loads(toy_net.read_text())
        assert meta["format"] == "spikeconv-net" and meta["model"] == "toy"
        assert meta["summary"]["total_steps"] == 32

    def test_run_report(self, toy_net, tmp_path):
        out = tmp_path / "run.json"
        assert cli.main(["run", str(toy_net), "--input", "0.75,0.25",
                         "--report", str(out)]) == 0
        data = json.loads(out.read_text())
        assert data["decoded_output"] == [0.5, 0.0]
        assert data["result"]["layers"][0]["spikes"] == {"0": 24, "1": 32}
        assert data["label"] == 0 and data["ambiguous"] is False
        assert data["ops"]["omega"] == 72
        m = data["manifest"]
        assert m["command"] == "run" and m["tool_version"]
        assert set(m["input_hashes"]) == {str(toy_net), str(tmp_path / "toy")}

    def test_reproducible(self, toy_net, tmp_path):
        out = tmp_path / "r.json"
        reports = []
        for _ in range(2):
            cli.main(["run", str(toy_net), "--input", "0.75,0.25", "--report", str(out)])
            reports.append(_report(out))
        assert reports[0] == reports[1]

    def test_trace_csv(self, toy_net, tmp_path):
        out = tmp_path / "trace.csv"
        assert cli.main(["run", str(toy_net), "--input", "0.75,0.25", "--trace", "0:0",
                         "--trace-csv", str(out), "--report", str(tmp_path / "r.json")]) == 0
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["step", "layer", "unit", "c", "u"]
        assert {r[2] for r in rows[1:]} == {"0"}

    def test_oracle(self, toy_net, capsys):
        assert cli.main(["oracle", str(toy_net), "--input", "0.75,0.25"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["oracle"]["layers"][0]["times"] == [24, 32]

    def test_diff(self, toy_net, capsys):
        assert cli.main(["diff", str(toy_net), "--input", "0.75,0.25"]) == 0
        assert capsys.readouterr().out.strip() == "mismatches: 0"

    def test_hwcost(self, toy_net, capsys):
        assert cli.main(["hwcost", str(toy_net), "--input", "0.75,0.25", "--delay", "2"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["placement"]["cores_used"] == 1
        assert data["power"]["steps_per_inference"] == 34
        assert data["mean_first_output_step"] == 26


class TestErrors:
    @pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run"], ["convert", "m", "--tmax", "x"]])
    def test_usage_errors(self, argv, capsys):
        assert cli.main(argv) == 1

    def test_legacy_strict_conflict(self, tmp_path):
        save_model(toy_model(), tmp_path / "toy")
        assert cli.main(["normalize", str(tmp_path / "toy"), "--out", str(tmp_path / "n"),
                         "--legacy", "--strict", "--data-dir", DATA]) == 1

    def test_wrong_input_length(self, toy_net, capsys):
        assert cli.main(["run", str(toy_net), "--input", "0.1,0.2,0.3"]) == 2

    def test_input_out_of_range(self, toy_net, capsys):
        assert cli.main(["run", str(toy_net), "--input", "1.5,0.2"]) == 2

    def test_missing_model(self, tmp_path, capsys):
        assert cli.main(["convert", str(tmp_path / "none"), "--out",
                         str(tmp_path / "n.json")]) == 2

    def test_model_changed_after_convert(self, toy_net, tmp_path, capsys):
        m = toy_model()
        save_model(m.replace_layers([m.layers[0].with_params(m.layers[0].weight * 0.5,
                                                             m.layers[0].bias)],
                                    normalization=m.normalization), tmp_path / "toy")
        assert cli.main(["run", str(toy_net), "--input", "0.5,0.5"]) == 2
        assert "changed since" in capsys.readouterr().err


class TestPipeline:
    def test_train_normalize_sweep(self, tmp_path, capsys):
        model, norm = tmp_path / "mlp", tmp_path / "mlp-norm"
        assert cli.main(["train", "--arch", "mlp:784-16-10", "--epochs", "1",
                         "--data-dir", DATA, "--out", str(model),
                         "--report", str(tmp_path / "train.json")]) == 0
        assert json.loads((tmp_path / "train.json").read_text())["test_accuracy"] > 0.7
        scatter = tmp_path / "scatter.csv"
        assert cli.main(["normalize", str(model), "--out", str(norm), "--samples", "64",
                         "--data-dir", DATA, "--scatter-csv", str(scatter),
                         "--report", str(tmp_path / "norm.json")]) == 0
        rep = json.loads((tmp_path / "norm.json").read_text())
        assert max(rep["normalization"]["residuals"]) < 1e-9
        assert scatter.read_text().startswith("layer,original,normalized_rescaled")
        sweep = tmp_path / "sweep.csv"
        assert cli.main(["sweep-tmax", str(norm), "--tmax-list", "1,8", "--limit", "40",
                         "--data-dir", DATA, "--out", str(sweep)]) == 0
        rows = list(csv.DictReader(sweep.open(newline="")))
        assert [r["T_max"] for r in rows] == ["1", "8"]
        assert float(rows[1]["error"]) < float(rows[0]["error"])
        assert cli.main(["sweep-percentile", str(model), "--percentiles", "99,100",
                         "--limit", "20", "--samples", "64", "--tmax", "4",
                         "--data-dir", DATA]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[-2].split(",")[2] == "99.0"


def test_sweep_on_micro_model(micro_normalized, tmp_path):
    save_model(micro_normalized, tmp_path / "micro", narrow=True)
    out = tmp_path / "sweep.csv"
    assert cli.main(["sweep-tmax", str(tmp_path / "micro"), "--tmax-list", "1,2,4,8,16",
                     "--limit", "200", "--data-dir", DATA, "--out", str(out)]) == 0
    errors = [float(r["error"]) for r in csv.DictReader(out.open(newline=""))]
    assert all(b <= a for a, b in zip(errors, errors[1:]))
