from pathlib import Path

import numpy as np
import pytest

from loopsoup.kernel import build_kernel, example_kernel, random_kernel
from loopsoup.loops import LoopMeasure

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def kernel():
    return example_kernel()


@pytest.fixture(scope="session")
def kernel4():
    return random_kernel(4, seed=7)


@pytest.fixture(scope="session")
def measure(kernel):
    return LoopMeasure(kernel, 1e-8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def configs():
    return CONFIGS


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
