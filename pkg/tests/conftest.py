import time

import numpy as np
import pytest

from mfdse import starlight as st
from mfdse import starlight_low as sl
from mfdse.oracle_high import HighFidelityOracle
from mfdse.oracle_low import LowFidelityOracle
from mfdse.sampling import collect_dataset
from mfdse.workload import DesignPoint, HwConfig, LayerShape, SwMapping, all_bundled_layers

SMALL_LAYER = LayerShape(1, 4, 4, 2, 2, 1, 1, name="small")


def make_dp(hw=(16, 64, 64), order=(0, 1, 2, 3, 4, 5, 6), tiling=None, layer=SMALL_LAYER):
    if tiling is None:
        tiling = ((1,) * 7, (1,) * 7, layer.dims)
    return DesignPoint(HwConfig(*hw), SwMapping(tuple(order), tuple(tuple(r) for r in tiling)), layer)


@pytest.fixture
def small_layer():
    return SMALL_LAYER


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# desk-scale shared artefacts, built once per session

N_LOW = 2**12
N_HIGH = 2**8
EPOCHS = 1000


@pytest.fixture(scope="session")
def low_dataset():
    return collect_dataset(LowFidelityOracle(), all_bundled_layers(), N_LOW, seed=0)


@pytest.fixture(scope="session")
def high_dataset():
    return collect_dataset(HighFidelityOracle(), all_bundled_layers(), N_HIGH, seed=1)


@pytest.fixture(scope="session")
def low_model(low_dataset):
    """``(model, history, seconds)`` after the full low-fidelity schedule."""
    t0 = time.process_time()
    model, history = sl.train_low(low_dataset, epochs=EPOCHS, seed=0)
    return model, history, time.process_time() - t0


@pytest.fixture(scope="session")
def low_model_no_pred(low_dataset):
    """Identically seeded VAE trained without the prediction loss."""
    model, _ = sl.train_low(low_dataset, epochs=EPOCHS, seed=0, weights=sl.LossWeights(pred=0.0))
    return model


@pytest.fixture(scope="session")
def starlight_model(low_model, high_dataset):
    train, _ = high_dataset.split(0)
    model = st.init_from_transfer(sl.export_encoder(low_model[0]), high_dataset, train, seed=0)
    model, _ = st.train_joint(model, EPOCHS)
    return model


# ---------------------------------------------------------------------------
# acceptance verdicts, echoed once at the end of the run

ACCEPTANCE: dict = {}


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records and prints one line per criterion."""

    def record(n, ok, detail=""):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
