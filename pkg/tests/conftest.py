import json
import os
from pathlib import Path

# deterministic single-threaded BLAS for the whole suite
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from resprune.data import synthetic_dataset  # noqa: E402
from resprune.experiment.config import from_mapping  # noqa: E402

HERE = Path(__file__).parent
FIXTURES = HERE / "fixtures"
GOLDEN = HERE / "golden"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def published_rows():
    """The 30 published (method, depth, MegaFLOPs, accuracy) rows."""
    return json.loads((FIXTURES / "published_runs" / "published.json").read_text())


@pytest.fixture(scope="session")
def tiny_data():
    train = synthetic_dataset(32, seed=5, split="train")
    test = synthetic_dataset(20, seed=5, split="test")
    return train, test


def tiny_config(method="control", **extra):
    """A ResNet-20 config on a few synthetic samples; trains in seconds."""
    raw = {"method": method, "depth": 20, "epochs": 2, "batch_size": 16,
           "data.source": "synthetic", "data.synthetic_train": 32, "data.synthetic_test": 20,
           "data.synthetic_seed": 5, "lr": 0.02, "lr_schedule": "1:0.1"}
    raw.update(extra)
    return from_mapping(raw)


@pytest.fixture
def make_config():
    return tiny_config


# acceptance reporting: one PASS/FAIL line per criterion at the end of the session

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "seconds": 0.0,
                                          "skipped": False})
    if report.when == "call":
        entry["seconds"] += report.duration
    if report.failed:
        entry["ok"] = False
    if report.skipped:
        entry["skipped"] = True


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "SKIP" if e["skipped"] and e["ok"] else ("PASS" if e["ok"] else "FAIL")
        terminalreporter.write_line(f"criterion {number:>2}  {status}  {e['title']} "
                                    f"({e['seconds']:.1f}s)")
