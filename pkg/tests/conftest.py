import hashlib
import json
import warnings
from pathlib import Path

import numpy as np
import pytest

from spikeconv.idx import dataset_paths, load_split
from spikeconv.model import load_model, save_model
from spikeconv.normalize import normalize_activations
from spikeconv.train import TrainConfig, train_model

DATA_DIR = Path(__file__).resolve().parent.parent / "data" / "mnist10k"

# The trained micro-model used throughout: a LeNet-flavoured conv net
# (4 parameter layers) reaching <= 3 % test error on the bundled data.
MICRO_CONFIG = TrainConfig(arch="lenet", epochs=20, lr=0.05, batch_size=64,
                           seed=42, shift=2, cosine=True)
CALIBRATION_SAMPLES = 1024
CALIBRATION_SEED = 0


@pytest.fixture(scope="session")
def mnist():
    xtr, ytr = load_split(DATA_DIR, "train")
    xte, yte = load_split(DATA_DIR, "test")
    return {"train": (xtr.reshape(-1, 1, 28, 28), ytr),
            "test": (xte.reshape(-1, 1, 28, 28), yte)}


def _cache_key(config):
    h = hashlib.sha256(json.dumps(config.to_json(), sort_keys=True).encode())
    for split in ("train", "test"):
        for p in dataset_paths(DATA_DIR, split):
            h.update(Path(p).read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def micro_model(request, mnist):
    """Trained once, then reused from the pytest cache (same config + data)."""
    cache = request.config.cache.mkdir("spikeconv-models") / _cache_key(MICRO_CONFIG)
    if (cache / "model.json").exists():
        return load_model(cache)
    model = train_model(MICRO_CONFIG, mnist["train"], name="micro")
    save_model(model, cache)
    return load_model(cache)


@pytest.fixture(scope="session")
def calibration(mnist):
    x, _ = mnist["train"]
    idx = np.random.default_rng(CALIBRATION_SEED).choice(len(x), CALIBRATION_SAMPLES,
                                                         replace=False)
    return x[np.sort(idx)]


@pytest.fixture(scope="session")
def micro_normalized(micro_model, calibration):
    norm, _ = normalize_activations(micro_model, calibration, 98.5)
    return norm


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


# -- acceptance reporting ---------------------------------------------------------

_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _VERDICTS[mark.args[0]] = (mark.args[1], "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        title, verdict, detail = _VERDICTS[n]
        line = f"criterion {n:2d} {verdict}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
