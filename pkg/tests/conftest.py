import time

import numpy as np
import pytest

from thermoedge.compression import representative_subset
from thermoedge.data import generate_synthetic, split_dataset, to_arrays
from thermoedge.nn import TRAIN_PRESETS, build_reference_model, train_model

DATA_SEED = 0
PER_CLASS = 300


@pytest.fixture(scope="session")
def toy_splits():
    """7-class synthetic set, 300 per class, 32x32, split 60/20/20."""
    ds = generate_synthetic(PER_CLASS, 32, seed=DATA_SEED)
    return tuple(to_arrays(part, 32) for part in split_dataset(ds, (0.6, 0.2, 0.2), seed=DATA_SEED))


@pytest.fixture(scope="session")
def trained_cnn(toy_splits):
    """micro_cnn trained with the vgg16 preset; returns (graph, seconds, history)."""
    train, val, _ = toy_splits
    t0 = time.perf_counter()
    graph, history = train_model(build_reference_model("micro_cnn", 32, 7, seed=DATA_SEED),
                                 train, val, TRAIN_PRESETS["vgg16"])
    return graph, time.perf_counter() - t0, history


@pytest.fixture(scope="session")
def toy_test_500():
    """500 held-out samples drawn with a different generator seed."""
    x, y = to_arrays(generate_synthetic(72, 32, seed=99), 32)
    return x[:500], y[:500]


@pytest.fixture(scope="session")
def calib_x(toy_splits):
    return representative_subset(toy_splits[0][0], 512, seed=DATA_SEED)


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        ACCEPTANCE[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    # parametrized cases of one criterion collapse into a single line
    grouped = {}
    for name, outcome in ACCEPTANCE.items():
        base = name.split("[")[0]
        grouped.setdefault(base, []).append(outcome)
    terminalreporter.section("acceptance criteria")
    for base in sorted(grouped, key=lambda n: int(n.split("_")[1][2:])):
        verdict = "PASS" if all(o == "passed" for o in grouped[base]) else "FAIL"
        terminalreporter.write_line(f"{verdict}  {base}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
