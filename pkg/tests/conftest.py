import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from gms.mixture import preset  # noqa: E402
from gms.schedule import make_schedule  # noqa: E402


@pytest.fixture(scope="session")
def linear():
    return make_schedule("linear", 1000)


@pytest.fixture(scope="session")
def cosine():
    return make_schedule("cosine", 1000)


@pytest.fixture(scope="session")
def toy():
    return preset("toy1d")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def toy_net(linear, toy):
    """Order-3 network trained on toy1d with the default hyperparameters."""
    from gms.noisenet import TrainHyper, train

    return train(toy, linear, order=3, hyper=TrainHyper())


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
