"""Command-line interface: ``spikeconv <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, codec, hwcost, metrics, normalize, oracle, snn, train
from .idx import IdxError, dataset_paths, load_split
from .model import ModelError, count_ann_macs, load_model, save_model

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
NET_FORMAT = "spikeconv-net"
DEFAULT_DATA = "data/mnist10k"

log = logging.getLogger("spikeconv")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers ---------------------------------------------------------------------

def _sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _hash_model_dir(path):
    path = Path(path)
    h = hashlib.sha256()
    meta = path / "model.json"
    if not meta.exists():
        raise ModelError(f"{path}: no model.json")
    h.update(meta.read_bytes())
    for entry in json.loads(meta.read_text(encoding="utf-8"))["layers"]:
        for key in ("weight_file", "bias_file"):
            if key in entry and (path / entry[key]).exists():
                h.update((path / entry[key]).read_bytes())
    return h.hexdigest()


def _hash_inputs(paths):
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out[str(p)] = _hash_model_dir(p)
        elif p.exists():
            out[str(p)] = _sha256_file(p)
    return out


def manifest(args, inputs):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    return {
        "command": args.command,
        "config": json.loads(json.dumps(config, default=str)),
        "tool_version": __version__,
        "input_hashes": _hash_inputs(inputs),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def emit(report, args, inputs, path=None):
    report = dict(report)
    report["manifest"] = manifest(args, inputs)
    text = _dumps(report)
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return report


def _float_list(text, kind=float):
    try:
        return [kind(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def _data_split(args, split):
    images, labels = load_split(args.data_dir, split)
    if getattr(args, "limit", None):
        images, labels = images[:args.limit], labels[:args.limit]
    return images, labels


def _data_files(args, split):
    try:
        return list(dataset_paths(args.data_dir, split))
    except (IdxError, FileNotFoundError):
        return []


def _calibration(args, model):
    images, _ = load_split(args.data_dir, "train")
    n = min(args.samples, len(images))
    idx = np.random.default_rng(args.seed).choice(len(images), n, replace=False)
    return images[np.sort(idx)].reshape((n,) + tuple(model.input_shape))


def load_net(path):
    path = Path(path)
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read network file {path}: {exc}") from None
    if meta.get("format") != NET_FORMAT:
        raise DataError(f"{path} is not a {NET_FORMAT} file")
    model_dir = (path.parent / meta["model"]).resolve()
    if _hash_model_dir(model_dir) != meta["model_sha256"]:
        raise DataError(f"model {model_dir} changed since {path} was written")
    model = load_model(model_dir)
    opts = meta["options"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        net = snn.convert(model, opts["t_max"], rectify_last=opts["rectify_last"],
                          first_layer_float=opts["first_layer_float"], ext=opts["ext"],
                          delay=opts.get("delay", 0))
    if opts.get("quantize_8bit"):
        net = hwcost.quantize_weights_8bit(net)
    return net, model_dir


def _inputs(args, net):
    """(batch, labels or None, input file list) for run/oracle/diff/hwcost."""
    if args.input is not None:
        values = np.array(_float_list(args.input))
        size = int(np.prod(net.input_shape))
        if values.size != size:
            raise DataError(f"--input has {values.size} values, the network expects {size}")
        return values.reshape((1,) + tuple(net.input_shape)), None, []
    images, labels = load_split(args.data_dir, args.split)
    if args.index is not None:
        if not 0 <= args.index < len(images):
            raise DataError(f"--index {args.index} outside 0..{len(images) - 1}")
        images, labels = images[args.index:args.index + 1], labels[args.index:args.index + 1]
    elif args.limit:
        images, labels = images[:args.limit], labels[:args.limit]
    return (images.reshape((len(images),) + tuple(net.input_shape)), labels,
            _data_files(args, args.split))


def _parse_trace(text):
    if text is None:
        return None
    if text == "all":
        return "all"
    probes = []
    for item in text.split(","):
        try:
            layer, unit = item.split(":")
            probes.append((int(layer), int(unit)))
        except ValueError:
            raise UsageError(f"bad probe {item!r}; use LAYER:UNIT or 'all'") from None
    return probes


def _trace_csv(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["step", "layer", "unit", "c", "u"])
    for step, layer, unit, c, u in result.trace:
        w.writerow([step, layer, unit, repr(c), repr(u)])
    return buf.getvalue()


# -- commands ---------------------------------------------------------------------

def cmd_train(args):
    cfg = train.TrainConfig(arch=args.arch, epochs=args.epochs, lr=args.lr,
                            batch_size=args.batch_size, seed=args.seed,
                            shift=args.shift, cosine=args.cosine)
    tr = load_split(args.data_dir, "train")
    te = load_split(args.data_dir, "test")
    model = train.train_model(cfg, tr, name=args.name)
    save_model(model, args.out)
    report = {"config": cfg.to_json(),
              "train_accuracy": train.evaluate(model, *tr),
              "test_accuracy": train.evaluate(model, *te),
              "ann_macs": count_ann_macs(model), "model": str(args.out)}
    emit(report, args, _data_files(args, "train") + _data_files(args, "test"), args.report)
    return EXIT_OK


def cmd_normalize(args):
    if args.legacy and args.strict:
        raise UsageError("--legacy and --strict are mutually exclusive")
    model = load_model(args.model)
    cal = _calibration(args, model)
    if args.legacy:
        norm = normalize.legacy_weight_norm(model, cal, args.percentile)
        scales = norm.normalization["scales"]
    else:
        norm, scales = normalize.normalize_activations(model, cal, args.percentile,
                                                       strict=args.strict)
    save_model(norm, args.out, narrow=True)
    rep = normalize.normalization_report(model, norm, cal, scales, args.percentile)
    if args.scatter_csv:
        Path(args.scatter_csv).write_text(rep.scatter_csv(), encoding="utf-8")
    emit({"normalization": rep.to_json(), "model": str(args.out),
          "method": norm.normalization["method"]},
         args, [args.model] + _data_files(args, "train"), args.report)
    return EXIT_OK


def cmd_convert(args):
    model = load_model(args.model)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        net = snn.convert(model, args.tmax, rectify_last=args.rectify_last,
                          first_layer_float=args.first_layer_float, ext=args.ext,
                          delay=args.delay)
    for w in caught:
        log.warning("%s", w.message)
    out = Path(args.out)
    model_dir = Path(args.model).resolve()
    try:
        rel = model_dir.relative_to(out.parent.resolve())
    except ValueError:
        rel = model_dir
    meta = {
        "format": NET_FORMAT,
        "model": str(rel),
        "model_sha256": _hash_model_dir(model_dir),
        "options": {"t_max": net.t_max, "rectify_last": net.rectify_last,
                    "first_layer_float": net.first_layer_float, "ext": net.ext,
                    "delay": net.delay, "quantize_8bit": args.quantize},
        "summary": {
            "stages": [{"kind": l.kind, "shape": list(l.out_shape), "rectify": l.rectify}
                       for l in net.layers],
            "neurons": net.n_neurons, "relays": net.n_relays,
            "total_steps": net.end_step, "frac_bits": net.frac_bits,
        },
    }
    out.write_text(_dumps(meta), encoding="utf-8")
    sys.stdout.write(_dumps({"network": str(out), **meta["summary"]}))
    return EXIT_OK


def cmd_run(args):
    net, model_dir = load_net(args.net)
    x, labels, files = _inputs(args, net)
    inputs = [args.net, model_dir] + files
    if len(x) == 1:
        res = snn.simulate(net, x[0], trace=_parse_trace(args.trace))
        report = {"result": res.to_json(), "ops": metrics.count_ops(res).to_json(),
                  "decoded_output": [None if np.isnan(v) else float(v)
                                     for v in res.decoded(len(net.layers) - 1).ravel()]}
        try:
            label, amb = snn.classify(res)
            report.update(label=label, ambiguous=amb)
        except snn.ClassificationError as exc:
            report.update(label=None, classification_error=str(exc))
        if labels is not None:
            report["true_label"] = int(labels[0])
        if args.trace_csv and res.trace is not None:
            Path(args.trace_csv).write_text(_trace_csv(res), encoding="utf-8")
    else:
        if args.trace:
            raise UsageError("--trace needs a single input (--input or --index)")
        agg = snn.run_dataset(net, x, labels, with_ann=True)
        report = {"aggregate": agg.summary(), "t_max": net.t_max}
    emit(report, args, inputs, args.report)
    return EXIT_OK


def _oracle_json(res):
    return {
        "label": res.label,
        "layers": [{"steps": [int(v) if t >= 0 else None for v, t in
                              zip(np.ravel(s), np.ravel(tt))],
                    "times": [int(t) for t in np.ravel(tt)],
                    "predicted_early": [int(u) for u in np.flatnonzero(np.ravel(e))]}
                   for s, tt, e in zip(res.steps, res.times, res.predicted_early)],
    }


def cmd_oracle(args):
    net, model_dir = load_net(args.net)
    x, _, files = _inputs(args, net)
    if len(x) != 1:
        raise UsageError("oracle needs a single input (--input or --index)")
    res = oracle.oracle_batch(net, x)[0]
    emit({"oracle": _oracle_json(res), "t_max": net.t_max}, args,
         [args.net, model_dir] + files, args.report)
    return EXIT_OK


def cmd_diff(args):
    net, model_dir = load_net(args.net)
    x, _, files = _inputs(args, net)
    if len(x) != 1:
        raise UsageError("diff needs a single input (--input or --index)")
    res = snn.simulate(net, x[0])
    rep = oracle.diff(res, oracle.oracle_batch(net, x)[0])
    print(f"mismatches: {rep.mismatches}")
    if args.report:
        emit({"diff": rep.to_json()}, args, [args.net, model_dir] + files, args.report)
    return EXIT_OK if rep.explained else EXIT_DATA


def _sweep_row(net, model, x, y, dataset, percentile):
    agg = snn.run_dataset(net, x, y)
    macs = count_ann_macs(model)
    omega = float(agg.omega.mean())
    return {
        "dataset": dataset, "T_max": net.t_max, "percentile": percentile,
        "error": 100.0 * (1.0 - agg.accuracy), "omega": omega,
        "sigma": float(agg.sigma.mean()), "spikes": agg.spikes_per_sample,
        "early_fraction": agg.early_spike_fraction, "ann_macs": macs,
        "energy_ratio": metrics.energy_report(macs, omega).ratio,
    }


def _write_csv(rows, path):
    buf = io.StringIO()
    metrics.write_sweep_csv(rows, buf)
    if path:
        Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")
    else:
        sys.stdout.write(buf.getvalue())


def cmd_sweep_tmax(args):
    model = load_model(args.model)
    x, y = _data_split(args, "test")
    x = x.reshape((len(x),) + tuple(model.input_shape))
    pct = (model.normalization or {}).get("percentile", "")
    rows = []
    for t in _float_list(args.tmax_list, int):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            net = snn.convert(model, t, rectify_last=args.rectify_last,
                              first_layer_float=args.first_layer_float)
        rows.append(_sweep_row(net, model, x, y, Path(args.data_dir).name, pct))
    _write_csv(rows, args.out)
    if args.report:
        emit({"rows": rows}, args, [args.model] + _data_files(args, "test"), args.report)
    return EXIT_OK


def cmd_sweep_percentile(args):
    model = load_model(args.model)
    cal = _calibration(args, model)
    x, y = _data_split(args, "test")
    x = x.reshape((len(x),) + tuple(model.input_shape))
    rows = []
    for p in _float_list(args.percentiles):
        norm, _ = normalize.normalize_activations(model, cal, p, strict=args.strict)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            net = snn.convert(norm, args.tmax)
        rows.append(_sweep_row(net, model, x, y, Path(args.data_dir).name, p))
    _write_csv(rows, args.out)
    if args.report:
        emit({"rows": rows}, args, [args.model] + _data_files(args, "train")
             + _data_files(args, "test"), args.report)
    return EXIT_OK


def cmd_hwcost(args):
    net, model_dir = load_net(args.net)
    params = hwcost.PowerParams()
    files = [args.net, model_dir]
    if args.power_params:
        try:
            data = json.loads(Path(args.power_params).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read power parameters: {exc}") from None
        params = hwcost.PowerParams.from_json(data)
        files.append(args.power_params)
    if args.quantize:
        net = hwcost.quantize_weights_8bit(net)
    net = hwcost.apply_transmission_delay(net, args.delay)
    placement = hwcost.place_cores(net, args.neurons_per_core, args.synapses_per_core)
    x, labels, more = _inputs(args, net)
    batch = snn.simulate_batch(net, x)
    ops_ = metrics.count_ops_batch(batch)
    omega = float(ops_["omega"].mean())
    power = hwcost.estimate_power(placement, omega, net.end_step, params)
    report = {"placement": placement.to_json(), "power": power.to_json(),
              "delay": net.delay, "quantized_8bit": bool(args.quantize),
              "mean_first_output_step": float(np.mean(batch.first_output_step)),
              "samples": len(x)}
    if labels is not None:
        pred, _ = snn.classify_batch(batch)
        report["accuracy"] = float(np.mean(pred == labels))
    emit(report, args, files + more, args.report)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def _add_input_args(p):
    p.add_argument("--input", help="comma-separated input values for a single sample")
    p.add_argument("--data-dir", default=DEFAULT_DATA)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--index", type=int, help="use one sample of the split")
    p.add_argument("--limit", type=int, help="use the first N samples of the split")
    p.add_argument("--report", help="write the JSON report here instead of stdout")


def _add_convert_flags(p):
    p.add_argument("--rectify-last", dest="rectify_last", action="store_true", default=True)
    p.add_argument("--no-rectify-last", dest="rectify_last", action="store_false")
    p.add_argument("--first-layer-float", action="store_true")


def build_parser():
    ap = _Parser(prog="spikeconv", description="Latency-coded ANN-to-SNN conversion toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train an MNIST model")
    p.add_argument("--arch", default="mlp:784-128-10")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--shift", type=int, default=0)
    p.add_argument("--cosine", action="store_true")
    p.add_argument("--name")
    p.add_argument("--data-dir", default=DEFAULT_DATA)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("normalize", help="normalize a trained model")
    p.add_argument("model")
    p.add_argument("--out", required=True)
    p.add_argument("--percentile", type=float, default=normalize.DEFAULT_PERCENTILE)
    p.add_argument("--samples", type=int, default=normalize.DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--legacy", action="store_true")
    p.add_argument("--data-dir", default=DEFAULT_DATA)
    p.add_argument("--scatter-csv")
    p.add_argument("--report")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("convert", help="build a spiking network description")
    p.add_argument("model")
    p.add_argument("--tmax", type=int, default=16)
    _add_convert_flags(p)
    p.add_argument("--ext", type=int)
    p.add_argument("--delay", type=int, default=0)
    p.add_argument("--quantize", action="store_true", help="8-bit weights")
    p.add_argument("--out", default="net.json")
    p.set_defaults(func=cmd_convert)

    for name, func, text in (("run", cmd_run, "simulate the spiking network"),
                             ("oracle", cmd_oracle, "closed-form prediction"),
                             ("diff", cmd_diff, "compare simulation with the oracle")):
        p = sub.add_parser(name, help=text)
        p.add_argument("net")
        _add_input_args(p)
        if name == "run":
            p.add_argument("--trace", help="'all' or LAYER:UNIT[,LAYER:UNIT...]")
            p.add_argument("--trace-csv")
        p.set_defaults(func=func)

    p = sub.add_parser("sweep-tmax", help="error/ops/energy over T_max")
    p.add_argument("model")
    p.add_argument("--tmax-list", default="1,2,4,8,16,32,64")
    _add_convert_flags(p)
    p.add_argument("--data-dir", default=DEFAULT_DATA)
    p.add_argument("--limit", type=int)
    p.add_argument("--out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_sweep_tmax)

    p = sub.add_parser("sweep-percentile", help="accuracy and early spikes over percentiles")
    p.add_argument("model")
    p.add_argument("--percentiles", default="90,92,94,96,98,98.5,100")
    p.add_argument("--tmax", type=int, default=16)
    p.add_argument("--samples", type=int, default=normalize.DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--data-dir", default=DEFAULT_DATA)
    p.add_argument("--limit", type=int)
    p.add_argument("--out")
    p.add_argument("--report")
    p.set_defaults(func=cmd_sweep_percentile)

    p = sub.add_parser("hwcost", help="deployment cost model")
    p.add_argument("net")
    p.add_argument("--delay", type=int, default=0)
    p.add_argument("--neurons-per-core", type=int, default=1024)
    p.add_argument("--synapses-per-core", type=int)
    p.add_argument("--power-params", help="JSON file overriding power constants")
    p.add_argument("--quantize", action="store_true")
    _add_input_args(p)
    p.set_defaults(func=cmd_hwcost)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelError, IdxError, codec.CodecError, snn.ConversionError,
            snn.SimulationError, normalize.NormalizationError, train.TrainingError,
            hwcost.PlacementError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
